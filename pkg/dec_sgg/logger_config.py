import os
import logging
from datetime import datetime, timezone
from typing import Dict, Any, List, Tuple
from pythonjsonlogger import jsonlogger

_INSTALLED: List[Tuple[logging.Logger, logging.Handler]] = []


class CustomJsonFormatter(jsonlogger.JsonFormatter):
    def add_fields(self, log_record: Dict[str, Any], record: logging.LogRecord, message_dict: Dict[str, Any]) -> None:
        super().add_fields(log_record, record, message_dict)
        log_record['timestamp'] = datetime.now(timezone.utc).isoformat()
        log_record['level'] = record.levelname
        log_record['module'] = record.module
        log_record['process_id'] = record.process
        if hasattr(record, 'telemetry'):
            log_record['telemetry'] = record.telemetry


def setup_logging(log_dir: str = 'logs', level: str = 'INFO') -> None:
    """Configure structured JSON logging: run log, telemetry log and console.

    Calling it again replaces the handlers installed by the previous call.
    """
    os.makedirs(log_dir, exist_ok=True)
    _remove_installed_handlers()

    json_formatter = CustomJsonFormatter(
        '%(timestamp)s %(level)s %(name)s %(message)s'
    )
    stamp = datetime.now().strftime("%Y%m%d")

    # Main run log
    run_handler = logging.FileHandler(os.path.join(log_dir, f'run_{stamp}.json'))
    run_handler.setFormatter(json_formatter)

    # Telemetry log (training traces, corpus counters, evaluation summaries)
    telemetry_handler = logging.FileHandler(os.path.join(log_dir, f'telemetry_{stamp}.json'))
    telemetry_handler.setFormatter(json_formatter)

    # Console output goes to stderr so stdout stays clean for reports
    console_handler = logging.StreamHandler()
    console_handler.setFormatter(json_formatter)
    console_handler.setLevel(logging.WARNING)

    root_logger = logging.getLogger('DecSGG')
    root_logger.setLevel(getattr(logging, level.upper(), logging.INFO))
    root_logger.addHandler(run_handler)
    root_logger.addHandler(console_handler)

    telemetry_logger = logging.getLogger('telemetry')
    telemetry_logger.setLevel(logging.INFO)
    telemetry_logger.propagate = False
    telemetry_logger.addHandler(telemetry_handler)

    _INSTALLED.extend([
        (root_logger, run_handler),
        (root_logger, console_handler),
        (telemetry_logger, telemetry_handler),
    ])


def _remove_installed_handlers() -> None:
    while _INSTALLED:
        logger, handler = _INSTALLED.pop()
        logger.removeHandler(handler)
        handler.close()
