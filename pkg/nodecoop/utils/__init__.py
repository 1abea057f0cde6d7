from typing import TypeVar, Dict, Callable

K = TypeVar("K")
V = TypeVar("V")


class FunctionRegistry(Dict[K, V]):
    """A dict of handler functions filled in with the ``register`` decorator."""

    def register(self, key: K) -> Callable[[V], V]:
        def _decorator(function):
            if key in self:
                raise ValueError(f"key {key} already registered")
            self[key] = function
            return function

        return _decorator

    def dispatch(self, key: K) -> V:
        """Return the handler for ``key``, raising ``LookupError`` with a readable message if there is none."""
        try:
            return self[key]
        except KeyError:
            raise LookupError(f"no handler registered for {key}") from None
