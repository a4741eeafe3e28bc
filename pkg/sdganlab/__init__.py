from .__version__ import version
__version__ = version
