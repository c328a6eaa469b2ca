import configparser
import logging
from typing import Dict, Optional, Tuple

from pydantic import ValidationError

from app.errors import ConfigError
from app.models.schemas import ExperimentConfig

logger = logging.getLogger(__name__)

SECTION_ORDER = ("experiment", "mesh", "field", "potential", "spectral", "cutoff", "fuzz", "tolerances", "output")
PARAMS_SECTION = "mesh.params"


def _key_lines(text: str) -> Dict[Tuple[str, Optional[str]], int]:
    """Line number of every section header and key, for error messages."""
    lines: Dict[Tuple[str, Optional[str]], int] = {}
    section = ""
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.strip()
        if not line or line[0] in "#;":
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            lines.setdefault((section, None), lineno)
        elif "=" in line:
            lines.setdefault((section, line.split("=", 1)[0].strip()), lineno)
    return lines


def _format(value) -> str:
    if isinstance(value, (list, tuple)):
        return ", ".join(_format(v) for v in value)
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


class ConfigService:
    """Reads and writes experiment configuration files (INI sections, `key = value`)."""

    def parse(self, text: str, source: str = "<config>") -> ExperimentConfig:
        """
        Parse and validate configuration text.

        Args:
            text: Configuration file contents
            source: Name used in error messages

        Returns:
            Validated ExperimentConfig

        Raises:
            ConfigError: On syntax errors, unknown sections or keys, or invalid values
        """
        parser = configparser.ConfigParser(interpolation=None, inline_comment_prefixes=("#", ";"))
        parser.optionxform = str
        try:
            parser.read_string(text, source=source)
        except configparser.Error as e:
            raise ConfigError(f"cannot parse {source}: {e}", line=getattr(e, "lineno", None))

        lines = _key_lines(text)
        data: Dict[str, Dict] = {}
        for section in parser.sections():
            values = dict(parser.items(section, raw=True))
            if section == PARAMS_SECTION:
                data.setdefault("mesh", {})["params"] = values
            elif section in SECTION_ORDER:
                data.setdefault(section, {}).update(values)
            else:
                raise ConfigError(f"unknown section in {source}", field=section, line=lines.get((section, None)))

        try:
            return ExperimentConfig.model_validate(data)
        except ValidationError as e:
            err = e.errors()[0]
            loc = [str(p) for p in err["loc"]]
            section = loc[0] if loc else ""
            key = loc[1] if len(loc) > 1 else None
            if section == "mesh" and key == "params" and len(loc) > 2:
                section, key = PARAMS_SECTION, loc[2]
            field = f"{section}.{key}" if key else section
            line = lines.get((section, key)) or lines.get((section, None))
            raise ConfigError(f"invalid configuration in {source}: {err['msg']}", field=field, line=line)

    def to_text(self, config: ExperimentConfig) -> str:
        """Serialize a configuration so that parse(to_text(c)) == c."""
        data = config.model_dump(exclude_none=True)
        out = []
        for section in SECTION_ORDER:
            values = dict(data.get(section, {}))
            params = values.pop("params", None) if section == "mesh" else None
            out.append(f"[{section}]")
            out.extend(f"{key} = {_format(value)}" for key, value in values.items())
            out.append("")
            if params is not None:
                out.append(f"[{PARAMS_SECTION}]")
                out.extend(f"{key} = {_format(value)}" for key, value in params.items())
                out.append("")
        return "\n".join(out)

    def load(self, path: str) -> ExperimentConfig:
        """Read and validate a configuration file."""
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as e:
            raise ConfigError(f"cannot read configuration file: {e}", field=path)
        config = self.parse(text, source=path)
        logger.info(f"Loaded {config.experiment.id} configuration from {path}")
        return config
