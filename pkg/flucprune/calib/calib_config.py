"""
calib/calib_config.py
校准配置 - 内置语料路径、默认采样参数
"""
from __future__ import annotations
import logging
import os

logger = logging.getLogger(__name__)


class CalibConfig:
    """校准配置类"""

    # ========== 路径配置 ==========
    BASE_PATH = os.path.dirname(os.path.dirname(os.path.abspath(__file__)))  # 包根目录
    ASSETS_PATH = os.path.join(BASE_PATH, "assets")
    CORPORA_PATH = os.path.join(ASSETS_PATH, "corpora")

    # ========== 采样设置 ==========
    SEQ_LEN = 32
    N_SAMPLES = 32            # 每个领域的校准序列数
    EVAL_FRACTION = 0.2       # 留出比例（按字节位置切分，永不参与统计）

    # ========== 内置领域 ==========
    # 百科 / 网页 / 代码 / 数学，与混合校准的四类来源对应
    DEFAULT_DOMAINS = {
        "wiki": "wiki.txt",
        "web": "web.txt",
        "code": "code.txt",
        "math": "math.txt",
    }

    @classmethod
    def corpus_path(cls, domain_id: str) -> str:
        """
        获取内置语料文件路径

        Args:
            domain_id: 领域名称（DEFAULT_DOMAINS 的 key）
        """
        return os.path.join(cls.CORPORA_PATH, cls.DEFAULT_DOMAINS[domain_id])

    @classmethod
    def default_domains(cls) -> list:
        """内置的四领域混合，α 均为 1/K。"""
        from .corpus import DomainSpec, normalize_weights
        specs = [DomainSpec(domain_id, (cls.corpus_path(domain_id),), 1.0)
                 for domain_id in cls.DEFAULT_DOMAINS]
        return normalize_weights(specs)

    @classmethod
    def validate_paths(cls) -> dict[str, bool]:
        """检查内置语料是否存在。"""
        results = {}
        for domain_id in cls.DEFAULT_DOMAINS:
            path = cls.corpus_path(domain_id)
            results[domain_id] = os.path.exists(path)
            if not results[domain_id]:
                logger.warning("内置语料不存在 - %s: %s", domain_id, path)
        return results
