"""Network and training-state snapshots on top of the binary container."""
from __future__ import annotations

import logging
from pathlib import Path
from typing import Any, Optional

from framework.checkpoint import load_checkpoint, save_checkpoint
from framework.errors import CheckpointError
from framework.module import RngState
from models.net_config import NetConfig
from models.train_config import RunConfig
from services.network import OMambaNet, build
from services.optim import PairSampler, TrainState

log = logging.getLogger(__name__)

MOMENT_PREFIXES = ("optimizer.m/", "optimizer.v/")


def checkpoint_path(out_dir: str | Path, iteration: int) -> Path:
    return Path(out_dir) / "checkpoints" / f"iter_{iteration:06d}.omk"


def save_run(path: str | Path, net: OMambaNet, run: RunConfig, state: Optional[TrainState] = None) -> Path:
    records = dict(net.state_dict())
    metadata: dict[str, Any] = {"config": run.model_dump(mode="json")}
    if state is not None:
        records.update({f"optimizer.m/{name}": value for name, value in state.m.items()})
        records.update({f"optimizer.v/{name}": value for name, value in state.v.items()})
        metadata.update(
            iteration=state.iteration,
            sampler=state.sampler.state(),
            rng={"seed": state.rng.seed, "algorithm": state.rng.algorithm, "state": state.rng.state()},
            best=state.best,
        )
    return save_checkpoint(path, records, metadata)


def stored_config(metadata: dict[str, Any]) -> RunConfig:
    try:
        return RunConfig.model_validate(metadata["config"])
    except (KeyError, ValueError) as exc:
        raise CheckpointError(f"checkpoint metadata has no usable configuration ({exc})") from None


def load_network(
    path: str | Path, net_config: Optional[NetConfig] = None, **updates: Any
) -> tuple[OMambaNet, dict[str, Any]]:
    """Rebuild a network (from ``net_config`` or the stored one) and load the saved weights.

    Non-None ``updates`` (``dtype``, ``evaluator``) replace the matching config fields.
    """
    records, metadata = load_checkpoint(path)
    config = net_config if net_config is not None else stored_config(metadata).net
    updates = {key: value for key, value in updates.items() if value is not None}
    if updates:
        config = NetConfig.model_validate({**config.model_dump(), **updates})
    net = build(config, RngState(0))
    weights = {name: value for name, value in records.items() if not name.startswith(MOMENT_PREFIXES)}
    net.load_state_dict(weights)
    log.info("loaded %d parameter tensors from %s", len(weights), path)
    return net, metadata


def restore_state(path: str | Path, net: OMambaNet, pair_count: int) -> TrainState:
    """Parameters, Adam moments, iteration, sampler position and generator state of a saved run."""
    records, metadata = load_checkpoint(path)
    if "iteration" not in metadata:
        raise CheckpointError(f"{path} holds weights only and cannot resume training")
    params = net.registry()
    net.load_state_dict({name: value for name, value in records.items() if not name.startswith(MOMENT_PREFIXES)})
    try:
        m = {name: records[f"optimizer.m/{name}"] for name in params}
        v = {name: records[f"optimizer.v/{name}"] for name in params}
    except KeyError as exc:
        raise CheckpointError(f"{path} is missing optimizer moment {exc.args[0]!r}") from None
    rng = RngState(metadata["rng"]["seed"], metadata["rng"]["algorithm"])
    rng.restore(metadata["rng"]["state"])
    sampler = PairSampler(pair_count, rng, state=metadata["sampler"])
    if len(sampler.permutation) != pair_count:
        raise CheckpointError(
            f"{path} was trained on {len(sampler.permutation)} pairs but the dataset now has {pair_count}"
        )
    return TrainState(iteration=int(metadata["iteration"]), m=m, v=v, rng=rng, sampler=sampler, best=metadata["best"])
