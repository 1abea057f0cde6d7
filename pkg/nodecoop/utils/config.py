"""Validated, immutable parameter objects.

Everything nodecoop reads from the outside (global config, scenario blocks) and every value type of the game model
is a ``ConfigObject``: a frozen dataclass that checks its field types and bounds when constructed, so an invalid
profile or mechanism can't exist.
"""

import operator
from collections import abc
from dataclasses import dataclass, fields, MISSING, field, Field
from enum import Enum
from typing import Iterable, Union, Mapping, Optional, get_type_hints


def _optional_inner(type_):
    """``T`` for ``Optional[T]``, ``True`` for wider unions containing ``None``, ``False`` otherwise."""
    if getattr(type_, "__origin__", None) is not Union:
        return False
    args = tuple(type_.__args__)
    if type(None) not in args:
        return False
    if len(args) == 2:
        return next(arg for arg in args if arg is not type(None))
    return True


def _type_name(type_or_types) -> str:
    if isinstance(type_or_types, Iterable):
        names = [_type_name(type_) for type_ in type_or_types]
        if not names:
            return "<nonexistent>"
        return names[0] if len(names) == 1 else ", ".join(names[:-1]) + " or " + names[-1]
    if type_or_types is type(None):
        return "None"
    origin = getattr(type_or_types, "__origin__", None)
    if origin is not None:
        return f"{origin._name}[{_type_name(type_or_types.__args__)}]"
    return getattr(type_or_types, "__name__", str(type_or_types))


def _is_real(value) -> bool:
    """Ints count as reals for ``float`` fields, bools don't."""
    return isinstance(value, (int, float)) and not isinstance(value, bool)


def _check_type(name, type_, value):
    origin = getattr(type_, "__origin__", type_)

    if origin == Union:
        for option in type_.__args__:
            try:
                _check_type(name, option, value)
                return
            except ConfigError:
                pass
        raise ConfigError(name, f"%s must be {_type_name(type_.__args__)}, not {type(value).__name__}")

    if not isinstance(origin, type):
        return
    if origin is float:
        if not _is_real(value):
            raise ConfigError(name, f"%s must be a number, not {type(value).__name__}")
        if value != value:
            raise ConfigError(name, "%s must not be NaN")
        return
    if origin is int and isinstance(value, bool):
        raise ConfigError(name, "%s must be int, not bool")
    # lists are accepted for tuple fields and converted afterwards
    if not isinstance(value, origin) and not (origin is tuple and isinstance(value, list)):
        raise ConfigError(name, f"%s must be {origin.__name__}, not {type(value).__name__}")

    args = getattr(type_, "__args__", None)
    if args is None:
        return
    if issubclass(origin, abc.Sequence) and not issubclass(origin, str):
        if len(args) == 1 or args[-1] is Ellipsis:
            item_types = [args[0]] * len(value)
        else:
            item_types = list(args)
        for index, (item_type, item) in enumerate(zip(item_types, value)):
            _check_type(f"{name}[{index}]", item_type, item)
    elif issubclass(origin, abc.Mapping):
        key_type, value_type = args
        for key, item in value.items():
            _check_type(f"{name} keys", key_type, key)
            _check_type(f"{name}[{key}]", value_type, item)


def _coerce(type_, value):
    """Normalizes values that pass type validation but aren't of the exact annotated type.

    Ints become floats in ``float`` fields (also inside ``Optional`` and sequences of floats), and sequences given for
    ``Tuple`` fields become tuples.
    """
    if value is None:
        return value
    inner = _optional_inner(type_)
    if isinstance(inner, type) or hasattr(inner, "__origin__"):
        type_ = inner
    if type_ is float and _is_real(value):
        return float(value)
    if getattr(type_, "__origin__", None) is tuple and isinstance(value, (list, tuple)):
        args = type_.__args__
        if (len(args) == 1 or args[-1] is Ellipsis) and args[0] is float:
            return tuple(float(item) if _is_real(item) else item for item in value)
        return tuple(value)
    return value


# metadata key, failing comparison, message
_BOUNDS = (
    ("min", operator.lt, "%s must be at least {}"),
    ("max", operator.gt, "%s must be at most {}"),
    ("gt", operator.le, "%s must be greater than {}"),
    ("lt", operator.ge, "%s must be less than {}"),
)


def _check_metadata(name: str, value, metadata: Mapping):
    for key, fails, message in _BOUNDS:
        if key in metadata and fails(value, metadata[key]):
            raise ConfigError(name, message.format(metadata[key]))
    if "min_length" in metadata and len(value) < metadata["min_length"]:
        raise ConfigError(name, f"length of %s must be at least {metadata['min_length']}")
    if "max_length" in metadata and len(value) > metadata["max_length"]:
        raise ConfigError(name, f"length of %s must be at most {metadata['max_length']}")
    if "one_of" in metadata and value not in metadata["one_of"]:
        raise ConfigError(name, f"%s must be one of {metadata['one_of']}")
    if "validate" in metadata:
        try:
            metadata["validate"](value)
        except ConfigError as ex:
            raise ex.parent_error(name) from None


@dataclass(frozen=True)
class ConfigError(Exception):
    """A parameter object rejected a value.

    ``field`` is the dotted path of the offending field, or ``None`` when the object as a whole is invalid. ``message``
    holds exactly one ``%s``, which is replaced by the field path.
    """

    field: Optional[str]
    message: str

    def __post_init__(self):
        if self.message.count("%s") != 1:
            raise ValueError("message must contain %s exactly once")

    def __str__(self):
        if not self.field:
            return (self.message % "").strip()
        return self.message % self.field

    def parent_error(self, field: str):
        """The same error as seen from the object that holds the failing one in ``field``."""
        return ConfigError(f"{field}.{self.field}" if self.field else field, self.message)


@dataclass(frozen=True)
class ConfigObject:
    """Base class for frozen parameter objects that validate themselves on creation.

    Field values must match the annotations. ``float`` fields take ints and store them as floats but reject bools
    and NaN, sequence items are checked against the type argument and unions accept any matching option.

    Field metadata (see ``conf_field``) adds range checks: ``min``/``max`` (inclusive), ``gt``/``lt`` (exclusive),
    ``min_length``/``max_length``, ``one_of`` and a ``validate`` callable. ``None`` in an ``Optional`` field skips
    them. ``flatten=False`` hides a field from ``to_flat_dict``.

    Checks spanning several fields belong in ``validate_self()``, which must call the superclass method.
    """

    def __init_subclass__(cls):
        dataclass(cls, frozen=True)

    def __post_init__(self):
        types = get_type_hints(self.__class__)
        field_: Field
        for field_ in fields(self):
            if not field_.init:
                continue
            value = getattr(self, field_.name)
            _check_type(field_.name, types[field_.name], value)
            coerced = _coerce(types[field_.name], value)
            if coerced is not value:
                object.__setattr__(self, field_.name, coerced)
            if coerced is not None:
                _check_metadata(field_.name, coerced, field_.metadata)
        self.validate_self()

    def validate_self(self):
        pass

    def to_flat_dict(self, prefix: str = "") -> dict:
        """Flatten this object into ``{"dotted.field": value}`` pairs, recursing into nested objects."""
        result = {}
        field_: Field
        for field_ in fields(self):
            if not field_.metadata.get("flatten", True):
                continue
            value = getattr(self, field_.name)
            key = prefix + field_.name
            if isinstance(value, ConfigObject):
                result.update(value.to_flat_dict(key + "."))
            else:
                result[key] = value
        return result


class ParseableConfigObject(ConfigObject):
    """A ``ConfigObject`` that can also be built from a TOML table or a scenario block."""

    @classmethod
    def from_dict(cls, data: dict):
        """Build an instance from ``data``.

        Nested ``ParseableConfigObject`` fields are parsed recursively and ``Enum`` fields take member names in any
        case. Absent keys fall back to the field default, then to ``None`` for ``Optional`` fields; anything else is
        reported as missing. Unknown keys are errors.
        """
        if not isinstance(data, Mapping):
            raise ConfigError(None, "%s must be a table")
        types = get_type_hints(cls)
        values = {}
        known = set()
        field_: Field
        for field_ in fields(cls):
            if not field_.init:
                continue
            known.add(field_.name)
            field_type = types[field_.name]
            inner = _optional_inner(field_type)
            if field_.name in data:
                value = data[field_.name]
            elif field_.default is not MISSING or field_.default_factory is not MISSING:
                continue
            elif inner:
                value = None
            else:
                raise ConfigError(field_.name, "%s missing")

            if isinstance(inner, type):
                field_type = inner
            if value is not None and isinstance(field_type, type):
                value = cls._parse_nested(field_.name, field_type, value)
            values[field_.name] = value

        unknown = [key for key in data if key not in known]
        if unknown:
            raise ConfigError(unknown[0], "unknown key %s")
        return cls(**values)

    @staticmethod
    def _parse_nested(name: str, type_: type, value):
        if issubclass(type_, ParseableConfigObject):
            try:
                return type_.from_dict(value)
            except ConfigError as ex:
                raise ex.parent_error(name) from None
        if issubclass(type_, Enum) and isinstance(value, str):
            try:
                return type_[value.upper()]
            except KeyError:
                names = ", ".join(member.name.lower() for member in type_)
                raise ConfigError(name, f"%s must be one of {names}") from None
        return value


def conf_field(default=MISSING, **kwargs):
    """``dataclasses.field`` with every keyword except ``default`` stored as validation metadata."""
    return field(default=default, metadata=kwargs)
