"""INI-style run configuration with a fixed, validated schema.

Every key can be overridden by the matching command-line flag. Unknown
sections or keys are rejected with the offending ``section.key`` named.
"""

from __future__ import annotations

import configparser
from typing import Any, Callable

from supportscope._io import ValidationError


def _bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _str_list(text: str) -> list[str]:
    return [t.strip() for t in text.split(",") if t.strip()]


def _int_list(text: str) -> list[int]:
    return [int(t) for t in _str_list(text)]


def _text(text: str) -> str:
    return text.replace("\\n", "\n")


_ENDPOINT_KEYS: dict[str, tuple[Callable[[str], Any], Any]] = {
    "base_url": (str, None),
    "model_name": (str, None),
    "api_key_env": (str, "SUPPORTSCOPE_API_KEY"),
    "timeout": (float, 120.0),
    "max_retries": (int, 3),
    "max_concurrency": (int, 8),
    "max_tokens": (int, 1024),
    "backoff_base": (float, 1.0),
}

SCHEMA: dict[str, dict[str, tuple[Callable[[str], Any], Any]]] = {
    "endpoint": {**_ENDPOINT_KEYS, "embed_item_marker": (_bool, True)},
    "judge": {**_ENDPOINT_KEYS, "max_tokens": (int, 64), "embed_item_marker": (_bool, True)},
    "sampling": {
        "k": (int, 16),
        "temperature": (float, 0.7),
        "top_p": (float, 0.9),
        "seed_base": (int, 0),
        "greedy": (_bool, True),
        "sampled": (_bool, True),
    },
    "prompt": {"template": (_text, "{question}\n{options}"), "question": (_text, None)},
    "convert": {"option_shuffle": (_bool, False), "seed": (int, 0), "check_images": (_bool, False)},
    "balance": {"total_n": (int, None), "seed": (int, 0), "group_by": (str, "modality")},
    "tagging": {"vocabulary": (_str_list, None)},
    "verify": {"policy": (str, "RULE_ONLY")},
    "stats": {"ks": (_int_list, [1, 2, 4, 8, 16]), "bootstrap": (int, 1000), "bootstrap_seed": (int, 0),
              "strict": (_bool, True)},
    "recipe": {"tau": (float, None), "k_ref": (int, 16), "collapse_margin": (float, 0.02)},
    "probe": {"lambda": (float, 1e-4), "max_iters": (int, 2000), "tol": (float, 1e-6), "seed": (int, 0)},
}


class Config:
    def __init__(self, values: dict[str, dict[str, Any]] | None = None, source: str | None = None):
        self.values = values or {}
        self.source = source

    @classmethod
    def load(cls, path: str | None) -> "Config":
        if path is None:
            return cls()
        parser = configparser.ConfigParser(interpolation=None)
        parser.optionxform = str
        try:
            with open(path, encoding="utf-8") as fh:
                parser.read_file(fh)
        except configparser.Error as exc:
            raise ValidationError(f"{path}: cannot parse config: {exc}") from None
        values: dict[str, dict[str, Any]] = {}
        for section in parser.sections():
            if section not in SCHEMA:
                raise ValidationError(f"{path}: unknown config section [{section}] (known: {', '.join(SCHEMA)})")
            for key, raw in parser.items(section):
                if key not in SCHEMA[section]:
                    raise ValidationError(f"{path}: unknown config key {section}.{key}")
                conv, _ = SCHEMA[section][key]
                try:
                    values.setdefault(section, {})[key] = conv(raw)
                except ValueError as exc:
                    raise ValidationError(f"{path}: bad value for {section}.{key}: {exc}") from None
        return cls(values, path)

    def get(self, section: str, key: str, override: Any = None) -> Any:
        if override is not None:
            return override
        if key in self.values.get(section, {}):
            return self.values[section][key]
        return SCHEMA[section][key][1]

    def require(self, section: str, key: str, override: Any = None, flag: str | None = None) -> Any:
        value = self.get(section, key, override)
        if value is None:
            hint = f" (pass {flag} or set it in the config file)" if flag else ""
            raise ValidationError(f"missing required setting {section}.{key}{hint}")
        return value

    def snapshot(self) -> dict:
        return {s: dict(v) for s, v in sorted(self.values.items())}


def schema_markdown() -> str:
    lines = ["| key | type | default |", "|---|---|---|"]
    for section, keys in SCHEMA.items():
        for key, (conv, default) in keys.items():
            tname = {_bool: "bool", _str_list: "comma list", _int_list: "comma list of int", _text: "text"}.get(
                conv, conv.__name__
            )
            lines.append(f"| `{section}.{key}` | {tname} | `{default!r}` |")
    return "\n".join(lines)
