"""Run manifests: what a subcommand was asked to do, with SHA-256 digests of
everything it read and wrote, so a run can be replayed and checked."""
import os
import json
import hashlib
import logging
from datetime import datetime, timezone
from typing import Any, Dict, List, Optional

import psutil

from .error_handler import DataError, ErrorHandler, ParseError
from .version import runtime_versions

logger = logging.getLogger('DecSGG.manifest')


def calculate_file_hash(filepath: str) -> str:
    """Calculate SHA-256 hash of a file"""
    sha256_hash = hashlib.sha256()
    with open(filepath, "rb") as f:
        for byte_block in iter(lambda: f.read(4096), b""):
            sha256_hash.update(byte_block)
    return sha256_hash.hexdigest()


def manifest_path(out_dir: str, subcommand: str) -> str:
    return os.path.join(out_dir, f"manifest.{subcommand}.json")


def _json_ready(value: Any) -> Any:
    if isinstance(value, dict):
        return {str(k): _json_ready(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_json_ready(v) for v in value]
    return value


class RunManifest:
    """Collects inputs, outputs and the outcome of one subcommand"""

    def __init__(self, subcommand: str, out_dir: str, argv: List[str], profile: str,
                 params: Dict[str, Any]):
        self.subcommand = subcommand
        self.out_dir = out_dir
        self.argv = list(argv)
        self.profile = profile
        self.params = dict(params)
        self.inputs: Dict[str, Dict[str, str]] = {}
        self.outputs: Dict[str, Dict[str, str]] = {}
        self.started = datetime.now(timezone.utc).isoformat()
        self._process = psutil.Process()
        self._rss = [self._process.memory_info().rss]

    def add_input(self, name: str, path: Optional[str]) -> None:
        if path is None:
            return
        if not os.path.exists(path):
            raise DataError(f"File not found: {path}", {'path': path})
        self.inputs[name] = {'path': os.path.abspath(path), 'sha256': calculate_file_hash(path)}
        logger.debug(f"Hashed input {name}", extra={'path': path})

    def add_output(self, name: str, path: str) -> None:
        self.outputs[name] = {
            'path': os.path.relpath(os.path.abspath(path), os.path.abspath(self.out_dir)),
            'sha256': calculate_file_hash(path),
        }

    def sample_memory(self) -> None:
        self._rss.append(self._process.memory_info().rss)

    def to_dict(self, status: str, error: Optional[Exception] = None) -> Dict[str, Any]:
        self.sample_memory()
        data = {
            'subcommand': self.subcommand,
            'argv': self.argv,
            'cwd': os.getcwd(),
            'profile': self.profile,
            'params': _json_ready(self.params),
            'seed': self.params.get('SEED'),
            'versions': runtime_versions(),
            'inputs': self.inputs,
            'outputs': self.outputs,
            'started': self.started,
            'finished': datetime.now(timezone.utc).isoformat(),
            'peak_rss_bytes': max(self._rss),
            'status': status,
        }
        if error is not None:
            data['error'] = ErrorHandler.describe(error)
        return data

    def write(self, status: str, error: Optional[Exception] = None) -> str:
        os.makedirs(self.out_dir, exist_ok=True)
        path = manifest_path(self.out_dir, self.subcommand)
        with open(path, 'w', encoding='utf-8') as f:
            json.dump(self.to_dict(status, error), f, indent=2, sort_keys=True)
            f.write('\n')
        logger.info("Manifest written", extra={'path': path, 'status': status})
        return path


def load_manifest(path: str) -> Dict[str, Any]:
    if not os.path.exists(path):
        raise DataError(f"File not found: {path}", {'path': path})
    try:
        with open(path, 'r', encoding='utf-8') as f:
            data = json.load(f)
    except json.JSONDecodeError as e:
        raise ParseError(f"Malformed manifest {path}: {e.msg}", {'path': path})
    for key in ('subcommand', 'argv', 'outputs'):
        if key not in data:
            raise ParseError(f"Manifest {path} lacks '{key}'", {'path': path})
    return data


def verify_inputs(manifest: Dict[str, Any]) -> List[str]:
    """Names of recorded inputs that are missing or changed"""
    changed = []
    for name, entry in manifest.get('inputs', {}).items():
        path = entry['path']
        if not os.path.exists(path) or calculate_file_hash(path) != entry['sha256']:
            changed.append(name)
    return changed


def verify_outputs(manifest: Dict[str, Any], out_dir: str) -> List[str]:
    """Names of recorded outputs whose regenerated copy under ``out_dir`` differs"""
    mismatched = []
    for name, entry in manifest['outputs'].items():
        path = os.path.join(out_dir, entry['path'])
        if not os.path.exists(path):
            mismatched.append(name)
            logger.error(f"Replayed output missing: {name}", extra={'path': path})
        elif calculate_file_hash(path) != entry['sha256']:
            mismatched.append(name)
            logger.critical(
                f"Integrity check failed for {name}",
                extra={'expected': entry['sha256'], 'path': path},
            )
    return mismatched


def replay_argv(manifest: Dict[str, Any], out_dir: str) -> List[str]:
    """Recorded argv with the output directory redirected"""
    argv = list(manifest['argv'])
    target = os.path.abspath(out_dir)
    for i, token in enumerate(argv):
        if token == '--out' and i + 1 < len(argv):
            argv[i + 1] = target
            return argv
        if token.startswith('--out='):
            argv[i] = f'--out={target}'
            return argv
    return ['--out', target] + argv
