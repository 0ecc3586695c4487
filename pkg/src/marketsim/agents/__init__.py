from marketsim.agents.audit import AuditLog, decision_record, read_audit
from marketsim.agents.portfolio import (
    Account,
    Action,
    ActionRequest,
    ConstraintResult,
    PortfolioState,
    apply_fill,
    enforce_constraints,
    parse_action,
    parse_action_document,
    short_capacity,
)
from marketsim.agents.provider import ExternalProvider, build_context
from marketsim.agents.runtime import AgentRuntime, make_order_id, runtime_from_config
from marketsim.agents.strategies import (
    BuyAndHold,
    CancelRequest,
    DecisionContext,
    MACrossover,
    RandomTrader,
    Strategy,
    make_strategy,
    register_strategy,
    strategy_names,
)

__all__ = [
    "Account", "Action", "ActionRequest", "AgentRuntime", "AuditLog", "BuyAndHold", "CancelRequest",
    "ConstraintResult", "DecisionContext", "ExternalProvider", "MACrossover", "PortfolioState",
    "RandomTrader", "Strategy", "apply_fill", "build_context", "decision_record", "enforce_constraints",
    "make_order_id", "make_strategy", "parse_action", "parse_action_document", "read_audit",
    "register_strategy", "runtime_from_config", "short_capacity", "strategy_names",
]
