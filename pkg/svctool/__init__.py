"""
SVC Tool - 在线签名验证工具包与评测框架
评测协议: 比对文件 / 分数文件 / EER / 奖牌积分排名
"""

import logging

# 库本身不配置日志，由命令行入口负责
logging.getLogger(__name__).addHandler(logging.NullHandler())

__version__ = "1.0.0"
