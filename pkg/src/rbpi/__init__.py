"""Road-Based Physical Internet: protocol stack and discrete-event simulator.

Shipments become datagrams with bit-exact headers, hub nodes route them with
internet-style routing strategies fed by live vehicle free-capacity reports,
and road vehicles physically carry them over a road graph.
"""

__version__ = "0.1.0"
