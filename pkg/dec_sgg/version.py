"""Version information for dec_sgg"""

import sys
import platform
from importlib import metadata

__version__ = '0.3.0'
__author__ = 'DecSGG Team'
__license__ = 'MIT'

VERSION_INFO = {
    'major': 0,
    'minor': 3,
    'patch': 0,
    'release': 'beta'
}

CHANGELOG = {
    '0.3.0': {
        'date': '2026-10-12',
        'changes': [
            'Run manifests with input/output digests and replay',
            'Composition ablations (intra only, inter only, random retrieval)',
            'Zero-shot R@K next to mR@K',
        ]
    },
    '0.2.0': {
        'date': '2026-09-28',
        'changes': [
            'Balanced predicate-first sampler',
            'KL consistency loss between composed and anchor relations',
            'Synthetic long-tail scene-graph generator',
        ]
    },
    '0.1.0': {
        'date': '2026-09-14',
        'changes': [
            'Initial release',
            'Box geometry and anchor selection',
            'Visual components dictionary with random eviction',
        ]
    }
}


def version_banner() -> str:
    """One-line description printed by ``decsgg --version``"""
    release = CHANGELOG.get(__version__, {}).get('date', 'unreleased')
    return f"{__version__} ({VERSION_INFO['release']}, {release})"


def runtime_versions() -> dict:
    """Versions of the interpreter and numeric stack, recorded in run manifests"""
    versions = {
        'dec_sgg': __version__,
        'python': sys.version.split()[0],
        'platform': platform.platform(),
    }
    for package in ('numpy', 'scikit-learn', 'click', 'python-json-logger'):
        try:
            versions[package] = metadata.version(package)
        except metadata.PackageNotFoundError:
            versions[package] = None
    return versions
