from cleargate.api.app import STATUS_CODES, create_app

__all__ = ["STATUS_CODES", "create_app"]
