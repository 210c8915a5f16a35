# %% [markdown]
# # Training on weak labels
#
# Only video-level labels are used. Every frame of an anomaly video starts
# out as an anomaly; as the threshold decays, frames with a low anomaly score
# get moved to the pseudo-normal set. A short run on a tiny synthetic set:

# %%
from missiongnn.config import preset
from missiongnn.model import MissionGnnModel
from missiongnn.synthetic import make_synthetic_dataset
from missiongnn.trainer import TrainState, TrainVideo, class_weights, quick_eval, train_loop

cfg = preset("synthetic").replace(steps=40, n_concepts=8, batch_size=64, alpha_d=0.99, seed=5)
ds = make_synthetic_dataset(n_classes=2, n_train=12, n_test=6, frames=120, seed=5, cfg=cfg)
model = MissionGnnModel.build(ds.graphs, ds.store, T=cfg.T, seed=5)
state = TrainState.create(model, cfg)
state.weights.lambda_a = class_weights(ds.manifest, [1, 2])
videos = [TrainVideo(e.video_id, e.video_label, ds.frames(e.video_id)) for e in ds.manifest.split("train")]

# %%
history = train_loop(state, videos)
for r in history[::10]:
    print(r["iter"], round(r["theta"], 4), round(r["L_total"], 3), r["n_pseudo_normal"])

# %% [markdown]
# Held-out frame metrics. With 40 steps don't expect much.

# %%
test = [(ds.frames(e.video_id), e.frame_labels()) for e in ds.manifest.split("test")]
print(quick_eval(model, test))
