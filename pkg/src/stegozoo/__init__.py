"""LSB steganography on float32 network weights, and detectors for it.

Modules:

* ``bitview``     -- bit-level views of float32 words
* ``tensorstore`` -- model records and the MZW1 file format
* ``netcore``     -- small dense networks with backprop and SGD/Adam
* ``stegattack``  -- embed/extract payloads in the X low mantissa bits
* ``zooforge``    -- deterministic zoos of trained MLPs and attacked copies
* ``featurex``    -- autoencoder loss, zero-input gradient and weight features
* ``detectkit``   -- threshold and tree-ensemble detectors, metrics, sweeps
* ``cli``         -- the ``stegozoo`` command
"""

__version__ = "0.1.0"
