from expr.parser import Expression, constant, evaluate, parse, to_source

__all__ = ["Expression", "constant", "evaluate", "parse", "to_source"]
