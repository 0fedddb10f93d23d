"""Adapters from oracle test fixtures to package objects.

The oracle network representation in _oracles.py stays independent of the
package; these helpers translate it so both sides can be run on the same
random instances.
"""

from __future__ import annotations

import numpy as np

from shiftbench import families as fam
from shiftbench.shift_model import (
    ConstantEta,
    InterventionSpec,
    PerStratumShift,
    ShiftModel,
    TabularEta,
    VariableSpec,
)
from shiftbench.tables import SampleTable

from _oracles import OracleNet


def to_shift_model(net: OracleNet) -> ShiftModel:
    """The ShiftModel equivalent of an oracle binary network."""
    variables = []
    for node in net.nodes:
        parents = tuple(net.nodes[p].name for p in node.parents)
        if parents:
            eta = TabularEta(tuple((float(l),) for l in node.logits))
        else:
            eta = ConstantEta((float(node.logits[0]),))
        variables.append(VariableSpec(node.name, fam.bernoulli(), parents, eta))
    interventions = tuple(
        InterventionSpec(net.nodes[i].name, PerStratumShift(0)) for i in net.shifted
    )
    return ShiftModel(tuple(variables), interventions)


def table_loss_fn(net: OracleNet, config_loss_fn):
    """Lift a configs-array loss to a SampleTable loss in node order."""
    names = [node.name for node in net.nodes]

    def loss_fn(table: SampleTable) -> np.ndarray:
        return np.asarray(config_loss_fn(table.matrix(names)), dtype=float)

    return loss_fn
