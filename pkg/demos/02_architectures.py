"""The two network families and the reconstruction head."""

# %%
import numpy as np

from fcsn import model as mdl
from fcsn.gradcheck import check_model

rng = np.random.default_rng(0)
x = rng.normal(size=(320, 64))

for variant in ("fcn", "deeplab"):
    cfg = mdl.ModelConfig(input_dim=64, variant=variant)
    params = mdl.init_params(cfg, seed=0)
    scores, _ = mdl.forward(params, cfg, [x], "eval")
    print(f"{variant:8s} native stride {cfg.native_stride:2d}  params {params.num_parameters():7d}  "
          f"scores {scores[0].shape}")

# %%
# Bilinear versus learnable upsampling in the pyramid variant: same shape, different values.
outs = []
for upsampler in ("deconv", "bilinear"):
    cfg = mdl.ModelConfig(input_dim=64, variant="deeplab", upsampler=upsampler)
    outs.append(mdl.forward(mdl.init_params(cfg, 0), cfg, [x], "eval")[0][0])
print("upsamplers agree on shape:", outs[0].shape == outs[1].shape, " max diff", np.abs(outs[0] - outs[1]).max())

# %%
# Eval mode is per-video: a video scores identically alone or inside a batch.
cfg = mdl.ModelConfig(input_dim=64)
params = mdl.init_params(cfg, 0)
batch = [rng.normal(size=(t, 64)) for t in (64, 320, 128)]
together, _ = mdl.forward(params, cfg, batch, "eval")
alone, _ = mdl.forward(params, cfg, [batch[1]], "eval")
print("bit-identical in batch:", together[1].tobytes() == alone[0].tobytes())

# %%
# Reconstruction head: decoder features at the selected frames, merged with the inputs.
cfg = mdl.ModelConfig(input_dim=64, reconstruction=True)
params = mdl.init_params(cfg, 0)
scores, cache = mdl.forward(params, cfg, [x], "eval")
f, _ = mdl.reconstruct_head(params, cfg, cache.decoded[0], [3, 100, 250], x)
print("reconstructed", f.shape)

# %%
# Gradient check of the full model at T=32, D=8.
report = check_model(mdl.ModelConfig(input_dim=8, reconstruction=True))
print(f"full-model gradcheck passed={report.passed} max rel err {report.max_error:.2e}")
