class BandLabError(Exception):
    """所有实验室错误的基类"""


class ValidationError(BandLabError, ValueError):
    """参数或输入不合法"""


class ConfigError(ValidationError):
    def __init__(self, field: str, message: str):
        super().__init__(f"{field}: {message}")
        self.field = field


class FeasibilityError(BandLabError):
    def __init__(self, what: str, estimated_cost: float, cap: float):
        super().__init__(f"{what} 超出可行性上限: 估计成本 {estimated_cost:.3g} > {cap:.3g}")
        self.estimated_cost = estimated_cost
        self.cap = cap


class BudgetError(BandLabError):
    def __init__(self, estimated_cost: float, budget: float):
        super().__init__(f"预算不足: 估计成本 {estimated_cost:.3g} > 预算 {budget:.3g}")
        self.estimated_cost = estimated_cost
        self.budget = budget


class ArtifactError(BandLabError):
    """找不到产物文件或摘要"""


class NumericalError(BandLabError):
    """特征值求解等数值过程失败"""
