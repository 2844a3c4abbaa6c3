"""SplitBox - private network function virtualization over secret-shared middleboxes."""

__version__ = "0.1.0"
