"""Line-oriented config files: ``key = value`` under ``[section]`` headers.

Repeated keys are kept in order (used for ``actor`` lines in scenario
sections). Values stay strings; typed getters convert on access.
"""

from __future__ import annotations

from pathlib import Path


class ConfigError(ValueError):
    pass


class Config:
    def __init__(self):
        # section -> list of (key, value) preserving order and duplicates
        self._sections: dict[str, list[tuple[str, str]]] = {}

    @classmethod
    def parse(cls, text: str) -> "Config":
        cfg = cls()
        section = ""
        for lineno, raw in enumerate(text.splitlines(), start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if line.startswith("[") and line.endswith("]"):
                section = line[1:-1].strip()
                cfg._sections.setdefault(section, [])
                continue
            if "=" not in line:
                raise ConfigError(f"line {lineno}: expected 'key = value', got {line!r}")
            key, _, value = line.partition("=")
            cfg._sections.setdefault(section, []).append((key.strip(), value.strip()))
        return cfg

    @classmethod
    def load(cls, path: str | Path) -> "Config":
        return cls.parse(Path(path).read_text())

    def sections(self) -> list[str]:
        return list(self._sections)

    def set(self, section: str, key: str, value) -> None:
        items = self._sections.setdefault(section, [])
        items.append((key, str(value)))

    def get(self, section: str, key: str, default=None) -> str | None:
        last = default
        for k, v in self._sections.get(section, []):
            if k == key:
                last = v
        return last

    def get_all(self, section: str, key: str) -> list[str]:
        return [v for k, v in self._sections.get(section, []) if k == key]

    def get_int(self, section: str, key: str, default: int | None = None) -> int:
        v = self.get(section, key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        return int(v)

    def get_float(self, section: str, key: str, default: float | None = None) -> float:
        v = self.get(section, key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        return float(v)

    def get_bool(self, section: str, key: str, default: bool | None = None) -> bool:
        v = self.get(section, key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        if v.lower() in ("true", "yes", "1", "on"):
            return True
        if v.lower() in ("false", "no", "0", "off"):
            return False
        raise ConfigError(f"[{section}] {key}: not a boolean: {v!r}")

    def get_str(self, section: str, key: str, default: str | None = None) -> str:
        v = self.get(section, key)
        if v is None:
            if default is None:
                raise ConfigError(f"missing [{section}] {key}")
            return default
        return v

    def items(self, section: str) -> list[tuple[str, str]]:
        return list(self._sections.get(section, []))

    def dump(self) -> str:
        out = []
        for section, items in self._sections.items():
            if section:
                out.append(f"[{section}]")
            for k, v in items:
                out.append(f"{k} = {v}")
            out.append("")
        return "\n".join(out)

    def save(self, path: str | Path) -> None:
        Path(path).write_text(self.dump())
