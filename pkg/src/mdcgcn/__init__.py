"""Face-graph geometric features and densely connected GCNs for triangle meshes."""

__version__ = "0.1.0"
