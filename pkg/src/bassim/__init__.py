"""Software-in-the-loop testbed for BACnet/IP building automation security.

A deterministic co-simulation of a five-zone office building, its virtual
HVAC controllers on a routed two-segment BACnet network, a supervisory
server, and an attack-injection engine that regenerates false-data-injection
and device-DoS datasets (operating trends plus packet captures).
"""

__version__ = "0.1.0"
