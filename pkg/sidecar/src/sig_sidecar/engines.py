"""Generation and embedding engines.

Two implementations per role: the real ML stack (diffusers pipeline with
ControlNet conditioning; ONNX face embedder with detection + alignment)
behind lazy imports, and a dependency-free deterministic fallback so the
protocol surface can run anywhere. Engine selection is explicit in config
or ``auto`` (real stack when importable).
"""

import hashlib
import io
import logging

import numpy as np
from PIL import Image

log = logging.getLogger(__name__)

EMBED_DIM = 512


class NoFaceError(Exception):
    """Embed input contains nothing face-like."""


class EngineUnavailableError(Exception):
    """Requested engine's dependencies are not installed."""


# --- generation ----------------------------------------------------------------


class ProceduralEngine:
    """Deterministic image synthesis with no ML dependencies.

    Pixels derive from SHA-256 over (prompt, negative_prompt, seed, size,
    control image bytes): the digest seeds a PCG64 stream that places soft
    color blobs on a gradient background. Identical requests produce
    byte-identical PNGs.
    """

    model_id = "procedural-diffusion-0"

    def generate(self, prompt, negative_prompt, seed, width, height, steps, guidance,
                 control_images) -> bytes:
        hasher = hashlib.sha256()
        for part in (prompt, negative_prompt, str(seed), f"{width}x{height}"):
            hasher.update(part.encode("utf-8"))
            hasher.update(b"\x00")
        for ctype, data in control_images:
            hasher.update(ctype.encode("ascii"))
            hasher.update(hashlib.sha256(data).digest())
        rng = np.random.Generator(np.random.PCG64(int.from_bytes(hasher.digest()[:8], "big")))

        yy, xx = np.mgrid[0:height, 0:width].astype(np.float64)
        base = rng.uniform(40, 200, size=3)
        tilt = rng.uniform(-60, 60, size=(2, 3))
        canvas = (
            base[None, None, :]
            + tilt[0][None, None, :] * (xx / max(width, 1))[:, :, None]
            + tilt[1][None, None, :] * (yy / max(height, 1))[:, :, None]
        )
        for _ in range(6):
            cx, cy = rng.uniform(0, width), rng.uniform(0, height)
            radius = rng.uniform(0.08, 0.3) * min(width, height)
            color = rng.uniform(-90, 90, size=3)
            blob = np.exp(-(((xx - cx) ** 2 + (yy - cy) ** 2) / (2 * radius**2)))
            canvas += blob[:, :, None] * color[None, None, :]
        pixels = np.clip(canvas, 0, 255).astype(np.uint8)
        buf = io.BytesIO()
        Image.fromarray(pixels, mode="RGB").save(buf, format="PNG", compress_level=1)
        return buf.getvalue()


class DiffusersEngine:
    """StableDiffusion + ControlNet pipeline over the diffusers library.

    Loads the configured checkpoint and one ControlNet per control type;
    per-request control images select which ControlNets participate.
    Requires the ``ml`` extra (torch, diffusers).
    """

    def __init__(self, config):
        import importlib.util

        missing = [m for m in ("torch", "diffusers") if importlib.util.find_spec(m) is None]
        if missing:
            raise EngineUnavailableError(
                f"diffusers engine needs {', '.join(missing)} "
                "(pip install 'sig-sidecar[ml]')"
            )
        import torch
        from diffusers import (
            ControlNetModel,
            StableDiffusionControlNetPipeline,
            UniPCMultistepScheduler,
        )
        self._torch = torch
        self.config = config
        self.model_id = config.checkpoint
        dtype = torch.float16 if config.device.startswith("cuda") else torch.float32
        self._controlnets = {
            ctype: ControlNetModel.from_pretrained(repo, torch_dtype=dtype)
            for ctype, repo in config.controlnets.items()
        }
        self._pipeline = StableDiffusionControlNetPipeline.from_pretrained(
            config.checkpoint,
            controlnet=list(self._controlnets.values()),
            torch_dtype=dtype,
            safety_checker=None,
        )
        self._pipeline.scheduler = UniPCMultistepScheduler.from_config(
            self._pipeline.scheduler.config
        )
        self._pipeline.to(config.device)
        self._order = list(config.controlnets)
        log.info("diffusers pipeline ready: %s on %s", config.checkpoint, config.device)

    def generate(self, prompt, negative_prompt, seed, width, height, steps, guidance,
                 control_images) -> bytes:
        torch = self._torch
        by_type = {ctype: data for ctype, data in control_images}
        images = []
        scales = []
        for ctype in self._order:
            if ctype in by_type:
                images.append(
                    Image.open(io.BytesIO(by_type[ctype])).convert("RGB").resize((width, height))
                )
                scales.append(1.0)
            else:
                # neutral input keeps the pipeline's controlnet list static
                images.append(Image.new("RGB", (width, height)))
                scales.append(0.0)
        generator = torch.Generator(device=self.config.device).manual_seed(seed & (2**63 - 1))
        result = self._pipeline(
            prompt,
            negative_prompt=negative_prompt or None,
            image=images,
            num_inference_steps=steps,
            guidance_scale=guidance,
            width=width,
            height=height,
            generator=generator,
            controlnet_conditioning_scale=scales,
        )
        buf = io.BytesIO()
        result.images[0].save(buf, format="PNG")
        return buf.getvalue()


# --- embedding -------------------------------------------------------------------


def _decode_rgb(png_bytes) -> np.ndarray:
    try:
        return np.asarray(Image.open(io.BytesIO(png_bytes)).convert("RGB"), dtype=np.float64)
    except Exception as exc:
        raise ValueError(f"image is not decodable: {exc}") from exc


class PixelStatEmbedder:
    """Deterministic 512-dim embedding from image statistics.

    Luminance and gradient-magnitude planes, each pooled to 16x16 and
    stacked, then L2-normalized. Near-uniform images (nothing resembling
    facial structure) are rejected with NoFaceError, mirroring the real
    embedder's no-face behavior.
    """

    model_id = "pixelstat-embed-0"
    dim = EMBED_DIM
    _VARIANCE_FLOOR = 2.0  # grey levels; blank frames sit near 0

    def embed(self, png_bytes) -> np.ndarray:
        rgb = _decode_rgb(png_bytes)
        lum = rgb @ np.array([0.299, 0.587, 0.114])
        if float(lum.std()) < self._VARIANCE_FLOOR:
            raise NoFaceError("no face detected (image is near-uniform)")
        gy, gx = np.gradient(lum)
        grad = np.hypot(gx, gy)

        def pool16(plane):
            h, w = plane.shape
            ys = np.linspace(0, h, 17, dtype=int)
            xs = np.linspace(0, w, 17, dtype=int)
            out = np.empty((16, 16))
            for i in range(16):
                for j in range(16):
                    block = plane[ys[i]:max(ys[i + 1], ys[i] + 1), xs[j]:max(xs[j + 1], xs[j] + 1)]
                    out[i, j] = float(block.mean())
            return out

        features = np.concatenate([pool16(lum).ravel(), pool16(grad).ravel()])
        features -= features.mean()
        norm = float(np.linalg.norm(features))
        if norm < 1e-9:
            raise NoFaceError("no face detected (degenerate feature vector)")
        return (features / norm).astype(np.float32)


class OnnxFaceEmbedder:
    """Face detection + alignment + ONNX embedding (ArcFace-style).

    Uses insightface's FaceAnalysis for the arcface default (buffalo_l
    pack: detector + w600k_r50 recognizer); ``ghostfacenet`` expects an
    ONNX file supplied via config. Requires the ``ml`` extra.
    """

    dim = EMBED_DIM

    def __init__(self, config):
        import importlib.util

        missing = [
            m for m in ("onnxruntime", "insightface") if importlib.util.find_spec(m) is None
        ]
        if missing:
            raise EngineUnavailableError(
                f"onnx embedder needs {', '.join(missing)} (pip install 'sig-sidecar[ml]')"
            )
        import onnxruntime  # noqa: F401
        from insightface.app import FaceAnalysis
        self.config = config
        if config.embedder == "arcface":
            self._app = FaceAnalysis(name="buffalo_l")
            self._app.prepare(ctx_id=0 if config.device.startswith("cuda") else -1)
            self._session = None
            self.model_id = "arcface-buffalo_l"
        else:
            if not config.embedder_onnx_path:
                raise EngineUnavailableError("ghostfacenet embedder needs embedder_onnx_path")
            import onnxruntime

            self._app = FaceAnalysis(allowed_modules=["detection"], name="buffalo_l")
            self._app.prepare(ctx_id=-1)
            self._session = onnxruntime.InferenceSession(config.embedder_onnx_path)
            self.model_id = "ghostfacenet-onnx"

    def embed(self, png_bytes) -> np.ndarray:
        rgb = _decode_rgb(png_bytes).astype(np.uint8)
        faces = self._app.get(rgb[:, :, ::-1])  # insightface expects BGR
        if not faces:
            raise NoFaceError("no face detected")
        face = max(faces, key=lambda f: float(f.det_score))
        if self._session is None:
            vec = np.asarray(face.normed_embedding, dtype=np.float64)
        else:
            from insightface.utils import face_align

            crop = face_align.norm_crop(rgb[:, :, ::-1], face.kps)
            blob = (crop[:, :, ::-1].astype(np.float32) / 127.5 - 1.0).transpose(2, 0, 1)[None]
            out = self._session.run(None, {self._session.get_inputs()[0].name: blob})[0][0]
            vec = out.astype(np.float64)
        norm = float(np.linalg.norm(vec))
        if norm < 1e-9:
            raise NoFaceError("embedder returned a zero vector")
        return (vec / norm).astype(np.float32)


# --- selection --------------------------------------------------------------------


def make_generation_engine(config):
    if config.generation_engine == "procedural":
        return ProceduralEngine()
    try:
        return DiffusersEngine(config)
    except EngineUnavailableError:
        if config.generation_engine == "diffusers":
            raise
        log.warning("diffusers stack unavailable; using the procedural engine")
        return ProceduralEngine()


def make_embed_engine(config):
    if config.embed_engine == "pixelstat":
        return PixelStatEmbedder()
    try:
        return OnnxFaceEmbedder(config)
    except EngineUnavailableError:
        if config.embed_engine == "onnx":
            raise
        log.warning("onnx embed stack unavailable; using the pixel-statistics embedder")
        return PixelStatEmbedder()
