"""JSON schemas for the marker map, intrinsics and detection records."""

import json
from functools import lru_cache
from importlib import resources

import jsonschema

from ..errors import SchemaError


@lru_cache(maxsize=None)
def load_schema(name):
    text = resources.files(__name__).joinpath(f"{name}.schema.json").read_text()
    return json.loads(text)


def validate(data, name, line=None):
    try:
        jsonschema.validate(data, load_schema(name))
    except jsonschema.ValidationError as exc:
        where = "/".join(str(p) for p in exc.absolute_path) or "document"
        raise SchemaError(f"{name} schema violation at {where}: {exc.message}", line=line) from None
