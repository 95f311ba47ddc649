"""Single-file training checkpoints (weights, optimizer state, step, config)."""
import hashlib
import io
import os
import tempfile
from dataclasses import dataclass, field

import torch

FORMAT_TAG = "edgesr-checkpoint/1"


class CheckpointError(RuntimeError):
    pass


@dataclass
class Checkpoint:
    stage: str
    step: int
    config: str
    networks: dict
    optimizers: dict = field(default_factory=dict)
    trainer_state: dict = field(default_factory=dict)

    def to_dict(self):
        return {
            "format": FORMAT_TAG,
            "stage": self.stage,
            "step": self.step,
            "config": self.config,
            "networks": self.networks,
            "optimizers": self.optimizers,
            "trainer_state": self.trainer_state,
        }

    def save(self, path):
        """Write atomically: temp file in the target directory, then rename."""
        directory = os.path.dirname(os.path.abspath(path))
        os.makedirs(directory, exist_ok=True)
        fd, tmp = tempfile.mkstemp(prefix=".ckpt-", dir=directory)
        try:
            with os.fdopen(fd, "wb") as f:
                torch.save(self.to_dict(), f)
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise
        return path

    @classmethod
    def load(cls, path):
        if not os.path.isfile(path):
            raise CheckpointError(f"checkpoint not found: {path}")
        try:
            blob = torch.load(path, map_location="cpu", weights_only=True)
        except Exception as exc:
            raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
        if not isinstance(blob, dict) or blob.get("format") != FORMAT_TAG:
            raise CheckpointError(f"{path} is not a {FORMAT_TAG} checkpoint")
        return cls(
            stage=blob["stage"],
            step=blob["step"],
            config=blob["config"],
            networks=blob["networks"],
            optimizers=blob.get("optimizers", {}),
            trainer_state=blob.get("trainer_state", {}),
        )

    def network(self, name):
        try:
            return self.networks[name]
        except KeyError:
            raise CheckpointError(
                f"checkpoint (stage {self.stage}) has no '{name}' weights; has {sorted(self.networks)}"
            ) from None


def weights_bytes(networks):
    """Serialized bytes of the weights section only."""
    buf = io.BytesIO()
    torch.save({name: networks[name] for name in sorted(networks)}, buf)
    return buf.getvalue()


def weights_digest(state_dict):
    """SHA-256 over parameter/buffer names, dtypes, shapes and raw bytes."""
    h = hashlib.sha256()
    for key in sorted(state_dict):
        t = state_dict[key].detach().cpu().contiguous()
        h.update(key.encode())
        h.update(str(t.dtype).encode())
        h.update(str(tuple(t.shape)).encode())
        h.update(t.numpy().tobytes())
    return h.hexdigest()
