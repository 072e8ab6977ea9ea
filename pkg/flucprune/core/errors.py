from __future__ import annotations


class FlucPruneError(Exception):
    """所有本项目异常的基类（CLI 据此决定退出码）。"""


class ShapeError(FlucPruneError, ValueError):
    """维度不匹配。"""


class NumericsError(FlucPruneError, ArithmeticError):
    """出现 NaN/Inf。"""


class InputError(FlucPruneError, ValueError):
    """token 越界、序列过长等输入问题。"""


class FormatError(FlucPruneError):
    """模型文件 / 缓存文件格式错误（magic、版本、截断、形状表不一致）。"""


class IngestionError(FlucPruneError):
    """校准语料读取失败。"""

    def __init__(self, domain_id: str, message: str):
        super().__init__(f"[{domain_id}] {message}")
        self.domain_id = domain_id


class ConsistencyError(FlucPruneError):
    """统计量缺失或不一致（例如某个 site 缺少某个 domain）。"""


class InsufficientDataError(FlucPruneError):
    """样本数不足以估计方差（count < 2）。"""


class ConfigError(FlucPruneError, ValueError):
    """配置、调度或剪枝目标非法。"""
