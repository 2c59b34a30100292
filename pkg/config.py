import os
from dotenv import load_dotenv

# 加载环境变量
load_dotenv()

class Config:
    """配置类"""

    # 输出配置
    OUTPUT_DIR = os.getenv('MA_OPT_OUTPUT_DIR', 'results')
    RESULT_FORMAT = os.getenv('MA_OPT_RESULT_FORMAT', 'csv')

    # 运行配置
    THREADS = int(os.getenv('MA_OPT_THREADS', 1))
    LOG_LEVEL = os.getenv('MA_OPT_LOG_LEVEL', 'INFO')

    # z 子问题的候选点策略（project-demo 默认值）
    GEOMETRY_CANDIDATES = os.getenv('MA_OPT_GEOMETRY_CANDIDATES', 'exhaustive')

    @classmethod
    def validate_config(cls):
        """验证配置是否合法"""
        invalid = []
        if cls.RESULT_FORMAT not in ('csv', 'jsonl'):
            invalid.append('MA_OPT_RESULT_FORMAT')
        if cls.THREADS < 1:
            invalid.append('MA_OPT_THREADS')
        if cls.LOG_LEVEL.upper() not in ('DEBUG', 'INFO', 'WARNING', 'ERROR', 'CRITICAL'):
            invalid.append('MA_OPT_LOG_LEVEL')
        if cls.GEOMETRY_CANDIDATES not in ('exhaustive', 'minimal'):
            invalid.append('MA_OPT_GEOMETRY_CANDIDATES')

        if invalid:
            raise ValueError(f"环境变量取值不合法: {', '.join(invalid)}")
