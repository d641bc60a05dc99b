"""Line-oriented experiment configuration.

Format: one `section.key = value` per line, `#` starts a comment, blank
lines ignored.  Values are kept as strings and coerced on access; booleans
are written true/false and lists are comma-separated.  Serialization is
canonical (sorted by section then key), so parse -> serialize -> parse is
the identity.
"""

from dataclasses import dataclass, field

from .errors import ConfigError

_MISSING = object()


@dataclass
class ExperimentConfig:
    values: dict = field(default_factory=dict)

    @classmethod
    def parse(cls, text: str) -> "ExperimentConfig":
        cfg = cls()
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(
                    f"line {lineno}: expected 'section.key = value', got "
                    f"{raw!r}"
                )
            lhs, _, rhs = line.partition("=")
            lhs = lhs.strip()
            if "." not in lhs:
                raise ConfigError(
                    f"line {lineno}: key {lhs!r} must be section.key"
                )
            section, _, key = lhs.partition(".")
            section, key = section.strip(), key.strip()
            if not section or not key:
                raise ConfigError(
                    f"line {lineno}: empty section or key in {raw!r}"
                )
            cfg.set(section, key, rhs.strip())
        return cfg

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        try:
            with open(path, "r", encoding="utf-8") as fh:
                text = fh.read()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        return cls.parse(text)

    def set(self, section: str, key: str, value) -> None:
        self.values.setdefault(section, {})[key] = str(value)

    def update(self, other: "ExperimentConfig") -> None:
        """Overlay another config; its entries win."""
        for section, entries in other.values.items():
            for key, value in entries.items():
                self.set(section, key, value)

    def apply_assignment(self, assignment: str) -> None:
        """Apply one `section.key=value` override string."""
        if "=" not in assignment:
            raise ConfigError(
                f"override {assignment!r} must look like section.key=value"
            )
        lhs, _, rhs = assignment.partition("=")
        lhs = lhs.strip()
        if "." not in lhs:
            raise ConfigError(f"override key {lhs!r} must be section.key")
        section, _, key = lhs.partition(".")
        if not section.strip() or not key.strip():
            raise ConfigError(f"override {assignment!r} has an empty part")
        self.set(section.strip(), key.strip(), rhs.strip())

    def dumps(self) -> str:
        lines = []
        for section in sorted(self.values):
            for key in sorted(self.values[section]):
                lines.append(f"{section}.{key} = {self.values[section][key]}")
        return "\n".join(lines) + ("\n" if lines else "")

    def has(self, section: str, key: str) -> bool:
        return key in self.values.get(section, {})

    def get(self, section: str, key: str, default=_MISSING) -> str:
        try:
            return self.values[section][key]
        except KeyError:
            if default is _MISSING:
                raise ConfigError(
                    f"missing required config entry {section}.{key}"
                ) from None
            return default

    def get_int(self, section: str, key: str, default=_MISSING) -> int:
        raw = self.get(section, key, default)
        if not isinstance(raw, str):
            return raw
        try:
            return int(raw)
        except ValueError:
            raise ConfigError(
                f"{section}.{key} must be an integer, got {raw!r}"
            ) from None

    def get_float(self, section: str, key: str, default=_MISSING) -> float:
        raw = self.get(section, key, default)
        if not isinstance(raw, str):
            return raw
        try:
            return float(raw)
        except ValueError:
            raise ConfigError(
                f"{section}.{key} must be a number, got {raw!r}"
            ) from None

    def get_bool(self, section: str, key: str, default=_MISSING) -> bool:
        raw = self.get(section, key, default)
        if not isinstance(raw, str):
            return raw
        low = raw.strip().lower()
        if low == "true":
            return True
        if low == "false":
            return False
        raise ConfigError(
            f"{section}.{key} must be true or false, got {raw!r}"
        )

    def get_list(self, section: str, key: str, default=_MISSING) -> list:
        raw = self.get(section, key, default)
        if not isinstance(raw, str):
            return raw
        items = [part.strip() for part in raw.split(",")]
        return [item for item in items if item]

    def get_float_list(self, section: str, key: str,
                       default=_MISSING) -> list:
        items = self.get_list(section, key, default)
        if items and isinstance(items[0], float):
            return items
        out = []
        for item in items:
            try:
                out.append(float(item))
            except (TypeError, ValueError):
                raise ConfigError(
                    f"{section}.{key} must be a comma-separated list of "
                    f"numbers, got {item!r}"
                ) from None
        return out

    def get_int_list(self, section: str, key: str, default=_MISSING) -> list:
        items = self.get_list(section, key, default)
        if items and isinstance(items[0], int):
            return items
        out = []
        for item in items:
            try:
                out.append(int(item))
            except (TypeError, ValueError):
                raise ConfigError(
                    f"{section}.{key} must be a comma-separated list of "
                    f"integers, got {item!r}"
                ) from None
        return out
