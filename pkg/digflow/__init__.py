"""
DiG-Flow
~~~~~~~~

Discrepancy-guided conditional flow matching on a synthetic task, with the certification
checks that back the gating mechanism.

:copyright: (c) 2026 - present digflow contributors
:license: MIT, see LICENSE

"""
from dataclasses import dataclass


@dataclass
class VersionInfo:
    major: int
    minor: int
    micro: int
    releaselevel: str
    serial: int = 0

    def __str__(self) -> str:
        return f"{self.major}.{self.minor}.{self.micro}{self.releaselevel[0]}{self.serial if self.serial != 0 else ''}"


__title__ = "digflow"
__author__ = "digflow contributors"
__license__ = "MIT"
__copyright__ = "Copyright 2026 - present digflow contributors"
version_info: VersionInfo = VersionInfo(0, 1, 0, "alpha")
__version__ = "0.1.0a0"

from . import checkpoint, config, runner
from .enums import *
from .errors import *
from .flow import *
from .gating import *
from .measures import *
from .refine import *
from .residual import *
from .synthetic import *
from .trainer import *
from .verify import *
