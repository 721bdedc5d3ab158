from .arch import ArchSpec, BudgetAudit, ConstraintCheck, ParamBudget, TailModel, TransformerParams
from .reports import AllocationResult, BoundReport, FunctionClassSample, OffsetEstimate
from .experiment import CellResult, ExperimentConfig, ExperimentResult, LabConfig
