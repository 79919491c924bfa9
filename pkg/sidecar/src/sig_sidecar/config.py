"""Runtime configuration for the sidecar server."""

from dataclasses import dataclass, field

# Hugging Face repo ids; the checkpoint default is a photorealism finetune
# of Stable Diffusion 1.5, the ControlNets are the standard v1.1 releases.
DEFAULT_CHECKPOINT = "digiplay/AbsoluteReality_v1.8.1"
DEFAULT_CONTROLNETS = {
    "openpose": "lllyasviel/control_v11p_sd15_openpose",
    "lineart": "lllyasviel/control_v11p_sd15_lineart",
}
EMBEDDERS = ("arcface", "ghostfacenet")


@dataclass
class SidecarConfig:
    checkpoint: str = DEFAULT_CHECKPOINT
    controlnets: dict = field(default_factory=lambda: dict(DEFAULT_CONTROLNETS))
    embedder: str = "arcface"
    embedder_onnx_path: str | None = None  # required for ghostfacenet
    device: str = "cpu"
    port: int = 8694
    # "auto" picks the real engine when its imports resolve, else procedural
    generation_engine: str = "auto"  # auto | diffusers | procedural
    embed_engine: str = "auto"       # auto | onnx | pixelstat

    def validate(self):
        problems = []
        if "openpose" not in self.controlnets:
            problems.append("controlnets must include at least 'openpose'")
        if self.embedder not in EMBEDDERS:
            problems.append(f"embedder must be one of {EMBEDDERS}, got {self.embedder!r}")
        if self.generation_engine not in ("auto", "diffusers", "procedural"):
            problems.append(f"unknown generation_engine {self.generation_engine!r}")
        if self.embed_engine not in ("auto", "onnx", "pixelstat"):
            problems.append(f"unknown embed_engine {self.embed_engine!r}")
        if not 0 <= self.port <= 65535:
            problems.append(f"port {self.port} out of range")
        if problems:
            raise ValueError("; ".join(problems))
        return self
