import io

import numpy as np
import pytest
from PIL import Image

from sig_sidecar.config import SidecarConfig
from sig_sidecar.engines import (
    NoFaceError,
    PixelStatEmbedder,
    ProceduralEngine,
    make_embed_engine,
    make_generation_engine,
)


def png_of(pixels) -> bytes:
    buf = io.BytesIO()
    Image.fromarray(pixels.astype(np.uint8), mode="RGB").save(buf, format="PNG")
    return buf.getvalue()


def face_like(size=128):
    y, x = np.ogrid[:size, :size]
    img = np.full((size, size, 3), 50, dtype=np.uint8)
    head = (x - size // 2) ** 2 + (y - size // 2) ** 2 <= (size // 3) ** 2
    img[head] = (200, 170, 150)
    for ex in (size // 3, 2 * size // 3):
        img[(x - ex) ** 2 + (y - size // 2 + 10) ** 2 <= 16] = (20, 20, 20)
    return img


class TestProceduralEngine:
    def test_deterministic(self):
        eng = ProceduralEngine()
        kwargs = dict(
            prompt="p", negative_prompt="", seed=5, width=64, height=64,
            steps=1, guidance=7.0, control_images=[],
        )
        assert eng.generate(**kwargs) == eng.generate(**kwargs)

    def test_seed_changes_pixels(self):
        eng = ProceduralEngine()
        a = eng.generate("p", "", 1, 64, 64, 1, 7.0, [])
        b = eng.generate("p", "", 2, 64, 64, 1, 7.0, [])
        assert a != b

    def test_control_images_condition_output(self):
        eng = ProceduralEngine()
        ctrl = png_of(face_like(32))
        a = eng.generate("p", "", 1, 64, 64, 1, 7.0, [("openpose", ctrl)])
        b = eng.generate("p", "", 1, 64, 64, 1, 7.0, [])
        assert a != b

    def test_requested_size_honored(self):
        eng = ProceduralEngine()
        png = eng.generate("p", "", 1, 128, 64, 1, 7.0, [])
        img = Image.open(io.BytesIO(png))
        assert img.size == (128, 64)


class TestPixelStatEmbedder:
    def test_unit_norm_512(self):
        emb = PixelStatEmbedder()
        vec = emb.embed(png_of(face_like()))
        assert vec.shape == (512,)
        assert abs(float(np.linalg.norm(vec)) - 1.0) <= 1e-4

    def test_deterministic(self):
        emb = PixelStatEmbedder()
        data = png_of(face_like())
        assert np.array_equal(emb.embed(data), emb.embed(data))

    def test_blank_image_rejected(self):
        emb = PixelStatEmbedder()
        with pytest.raises(NoFaceError):
            emb.embed(png_of(np.full((64, 64, 3), 99)))

    def test_content_sensitivity(self):
        emb = PixelStatEmbedder()
        a = emb.embed(png_of(face_like()))
        other = face_like()
        other[:20] = (255, 0, 0)
        b = emb.embed(png_of(other))
        assert not np.array_equal(a, b)

    def test_undecodable_is_value_error(self):
        with pytest.raises(ValueError):
            PixelStatEmbedder().embed(b"junk")


def test_auto_engines_fall_back_without_ml_stack():
    config = SidecarConfig()
    gen = make_generation_engine(config)
    emb = make_embed_engine(config)
    try:
        import diffusers  # noqa: F401

        assert type(gen).__name__ == "DiffusersEngine"
    except ImportError:
        assert isinstance(gen, ProceduralEngine)
    try:
        import insightface  # noqa: F401
        import onnxruntime  # noqa: F401

        assert type(emb).__name__ == "OnnxFaceEmbedder"
    except ImportError:
        assert isinstance(emb, PixelStatEmbedder)


def test_explicit_ml_engine_errors_when_missing():
    pytest.importorskip("PIL")
    try:
        import diffusers  # noqa: F401

        pytest.skip("diffusers installed; the unavailable path is not reachable")
    except ImportError:
        pass
    from sig_sidecar.engines import EngineUnavailableError

    with pytest.raises(EngineUnavailableError):
        make_generation_engine(SidecarConfig(generation_engine="diffusers"))


def test_config_validation():
    with pytest.raises(ValueError):
        SidecarConfig(controlnets={"lineart": "x"}).validate()
    with pytest.raises(ValueError):
        SidecarConfig(embedder="resnet").validate()
    assert SidecarConfig().validate() is not None
