"""Checkpoint container: one ``.npz`` file holding every slot's weights and moment buffers.

Arrays are stored under ``slot/<id>/<buffer>``; a JSON header in the ``meta`` entry lists
the slots in order with their family, state kind and step counter. Arrays keep their
dtype, so a save / load round trip is bit-exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np

from ..errors import ConfigError
from ..moments import MomentState
from ..optimizers import AdamState, ParamSlot

FORMAT = "vamuon-checkpoint/1"


def save_checkpoint(path, step: int, slots: list[ParamSlot], extra: dict | None = None) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {}
    header = {"format": FORMAT, "step": int(step), "slots": [], "extra": extra or {}}
    for slot in slots:
        prefix = f"slot/{slot.id}"
        arrays[f"{prefix}/weights"] = slot.weights
        st = slot.state
        if isinstance(st, MomentState):
            kind = "moment"
            arrays[f"{prefix}/M"] = st.M
            arrays[f"{prefix}/Gamma"] = st.Gamma
        else:
            kind = "adam"
            arrays[f"{prefix}/m"] = st.m
            arrays[f"{prefix}/v"] = st.v
        header["slots"].append(
            {"id": slot.id, "family": slot.family, "state": kind, "t": int(st.t), "is_embedding": slot.is_embedding}
        )
    arrays["meta"] = np.array(json.dumps(header))
    # write through a file handle so numpy does not append another suffix
    with open(path, "wb") as fh:
        np.savez(fh, **arrays)
    return path


def load_checkpoint(path) -> tuple[int, list[ParamSlot], dict]:
    """Return (step, slots, extra) from a checkpoint written by `save_checkpoint`."""
    try:
        data = np.load(Path(path), allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot read checkpoint {path}: {exc}") from None
    with data:
        header = json.loads(str(data["meta"]))
        if header.get("format") != FORMAT:
            raise ConfigError(f"{path}: unsupported checkpoint format {header.get('format')!r}")
        slots = []
        for rec in header["slots"]:
            prefix = f"slot/{rec['id']}"
            if rec["state"] == "moment":
                state = MomentState(M=data[f"{prefix}/M"], Gamma=data[f"{prefix}/Gamma"], t=rec["t"])
            else:
                state = AdamState(m=data[f"{prefix}/m"], v=data[f"{prefix}/v"], t=rec["t"])
            slots.append(
                ParamSlot(
                    id=rec["id"],
                    family=rec["family"],
                    weights=data[f"{prefix}/weights"],
                    state=state,
                    is_embedding=rec["is_embedding"],
                )
            )
    return header["step"], slots, header.get("extra", {})
