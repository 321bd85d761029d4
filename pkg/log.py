import logging
import multiprocessing
import os
import sys

LOGGER_NAME = "fsilab_logger"


# This function will be set as the global exception hook
def handle_exception(exc_type, exc_value, exc_traceback):
    """
    Logs any unhandled exception before the interpreter exits.
    """
    logger = logging.getLogger(LOGGER_NAME)
    if not logger.hasHandlers():
        # Nothing configured yet, fall back to the default hook
        sys.__excepthook__(exc_type, exc_value, exc_traceback)
        return

    logger.critical("--- UNHANDLED EXCEPTION ---", exc_info=(exc_type, exc_value, exc_traceback))
    logger.critical("--- FSILAB RUN IS CRASHING ---")


def log_file_mode() -> str:
    """'w' in the main process, 'a' in pool workers so they never truncate its log."""
    return "a" if multiprocessing.parent_process() is not None else "w"


def setup_logger():
    """Sets up the file logger and exception handler shared by every module."""

    logs_dir = os.environ.get("FSILAB_LOG_DIR", "logs")
    if not os.path.exists(logs_dir):
        os.makedirs(logs_dir, exist_ok=True)

    logger = logging.getLogger(LOGGER_NAME)
    logger.setLevel(logging.INFO)

    if logger.hasHandlers():
        return logger

    log_path = os.path.join(logs_dir, "fsilab_runtime.log")
    file_handler = logging.FileHandler(log_path, mode=log_file_mode())
    file_handler.setLevel(logging.INFO)

    formatter = logging.Formatter('%(asctime)s - %(levelname)s - %(message)s')
    file_handler.setFormatter(formatter)

    logger.addHandler(file_handler)

    sys.excepthook = handle_exception

    return logger


def enable_console(logger: logging.Logger) -> None:
    """Mirror log records to stderr (used by the CLI's --verbose flag)."""
    for handler in logger.handlers:
        if getattr(handler, "_fsilab_console", False):
            return
    stream = logging.StreamHandler()
    stream.setLevel(logging.INFO)
    stream.setFormatter(logging.Formatter('%(levelname)s - %(message)s'))
    stream._fsilab_console = True
    logger.addHandler(stream)
