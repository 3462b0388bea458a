"""Speculative reconfigurable replicated state machine with a deterministic
simulation harness."""

from .engine import BadSlot, BranchDead, BranchEngine, ProtocolViolation, start_engine
from .membership import (GroupView, NoLeader, PolicyViolation, Registry,
                         select_leader)
from .replica import (BranchRecord, BranchStatus, NotAMember, NotLeader,
                      Replica, TimingConfig, init_idle, init_replica,
                      recover_replica)
from .trunk import Notification, NotificationKind, Trunk, TrunkBuilder
from .types import (NOOP, Ballot, BranchId, Command, CommandId, CommandKind,
                    Configuration, EmptyConfiguration, ProcessId, ballot_less,
                    initial_branch_id, recon_command, user_command)

__version__ = "0.1.0"
