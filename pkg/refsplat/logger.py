# refsplat/logger.py
import logging
import sys
import os
from datetime import datetime
from colorama import init, Fore, Style
from refsplat.config.settings import settings, PROJECT_BASE_DIR

# 初始化 colorama
init(autoreset=True)

LEVEL_MAPPING = {
    "DEBUG": logging.DEBUG,
    "INFO": logging.INFO,
    "WARNING": logging.WARNING,
    "ERROR": logging.ERROR,
    "CRITICAL": logging.CRITICAL,
}

LEVEL_COLORS = {
    logging.DEBUG: Fore.BLUE,
    logging.INFO: Fore.GREEN,
    logging.WARNING: Fore.YELLOW,
    logging.ERROR: Fore.RED,
    logging.CRITICAL: Fore.MAGENTA,
}

DATE_FORMAT = "%Y-%m-%d %H:%M:%S"
FILE_FORMAT = "%(asctime)s | %(levelname)-8s | %(name)s:%(funcName)s:%(lineno)d - %(message)s"

# 图像 / 数值库在 DEBUG 下过于啰嗦（PNG 分块、线程池等）
NOISY_LOGGERS = ("PIL", "matplotlib", "numba", "torch._dynamo")


def module_path(pathname: str) -> str:
    """源文件路径 -> 相对项目根目录的点分模块名"""
    try:
        path = os.path.relpath(pathname, PROJECT_BASE_DIR)
    except ValueError:
        path = pathname
    if path.startswith(".."):
        path = os.path.basename(pathname)
    return os.path.splitext(path)[0].replace(os.sep, ".")


class ColoredFormatter(logging.Formatter):
    """彩色日志格式器：时间 | 级别 | 模块:函数:行号 - 消息"""

    def format(self, record):
        color = LEVEL_COLORS.get(record.levelno, Style.RESET_ALL)
        location = f"{module_path(record.pathname)}:{record.funcName}:{record.lineno}"
        text = (
            f"{Fore.GREEN}{self.formatTime(record, DATE_FORMAT)}{Style.RESET_ALL} | "
            f"{color}{record.levelname:8}{Style.RESET_ALL} | "
            f"{Fore.CYAN}{location}{Style.RESET_ALL} - "
            f"{record.getMessage()}"
        )
        if record.exc_info:
            text = f"{text}\n{self.formatException(record.exc_info)}"
        return text


def setup_logging(log_dir: str = None):
    """初始化日志系统，从环境变量读取日志级别"""
    for name in NOISY_LOGGERS:
        logging.getLogger(name).setLevel(logging.WARNING)

    log_level = LEVEL_MAPPING.get(settings.app_log_level.upper(), logging.INFO)
    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    root_logger.handlers.clear()

    console_handler = logging.StreamHandler(sys.stdout)
    console_handler.setLevel(log_level)
    console_handler.setFormatter(ColoredFormatter())
    root_logger.addHandler(console_handler)

    if not settings.log_to_file:
        return

    # 文件 Handler 按天滚动命名，纯文本
    target_dir = log_dir or settings.log_dir
    os.makedirs(target_dir, exist_ok=True)
    file_handler = logging.FileHandler(
        os.path.join(target_dir, f"refsplat_{datetime.now().strftime('%Y%m%d')}.log"),
        encoding="utf-8",
    )
    file_handler.setLevel(log_level)
    file_handler.setFormatter(logging.Formatter(FILE_FORMAT, DATE_FORMAT))
    root_logger.addHandler(file_handler)


def set_log_level(level_str: str):
    """动态设置日志级别"""
    level_str = level_str.upper()
    if level_str not in LEVEL_MAPPING:
        raise ValueError(f"Invalid log level: {level_str}. Valid levels: {list(LEVEL_MAPPING.keys())}")

    log_level = LEVEL_MAPPING[level_str]
    root_logger = logging.getLogger()
    root_logger.setLevel(log_level)
    for handler in root_logger.handlers:
        handler.setLevel(log_level)
    logging.debug(f"日志级别已设置为: {level_str}")
