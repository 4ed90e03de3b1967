"""Supervised learning of random quantum circuit outputs with scalable CNNs."""

from .circuits import (
    Circuit,
    CircuitEncoding,
    Gate,
    GateSet,
    build_bv_circuit,
    count_circuits,
    decode_one_hot,
    encode_one_hot,
    enumerate_circuits,
    sample_random_circuit,
    swap_qubit_pair,
    swap_qubit_rows,
)
from .simulator import expectations, run_circuit, sample_measurements

__version__ = "0.1.0"
