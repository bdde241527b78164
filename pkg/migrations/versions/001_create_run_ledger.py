"""Create run ledger tables

Revision ID: 001
Revises:
Create Date: 2026-10-17

"""
from alembic import op
import sqlalchemy as sa


# revision identifiers, used by Alembic
revision = '001'
down_revision = None
branch_labels = None
depends_on = None


def upgrade():
    op.create_table(
        'runs',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('command', sa.String(), nullable=False),
        sa.Column('config_name', sa.String(), nullable=False),
        sa.Column('seed', sa.String(length=20), nullable=True),
        sa.Column('inputs_json', sa.Text(), nullable=True),
        sa.Column('output_dir', sa.String(), nullable=False),
        sa.Column('exit_code', sa.Integer(), nullable=True),
        sa.Column('created_at', sa.DateTime(), nullable=True),
        sa.PrimaryKeyConstraint('id')
    )
    op.create_index(op.f('ix_runs_id'), 'runs', ['id'], unique=False)
    op.create_index(op.f('ix_runs_command'), 'runs', ['command'], unique=False)

    op.create_table(
        'stage_timings',
        sa.Column('id', sa.Integer(), nullable=False),
        sa.Column('run_id', sa.Integer(), nullable=False),
        sa.Column('position', sa.Integer(), nullable=False),
        sa.Column('stage', sa.String(), nullable=False),
        sa.Column('duration_ms', sa.Float(), nullable=False),
        sa.ForeignKeyConstraint(['run_id'], ['runs.id']),
        sa.PrimaryKeyConstraint('id')
    )
    op.create_index(op.f('ix_stage_timings_id'), 'stage_timings', ['id'], unique=False)


def downgrade():
    op.drop_index(op.f('ix_stage_timings_id'), table_name='stage_timings')
    op.drop_table('stage_timings')
    op.drop_index(op.f('ix_runs_command'), table_name='runs')
    op.drop_index(op.f('ix_runs_id'), table_name='runs')
    op.drop_table('runs')
