# %% [markdown]
# # From frame embedding to class scores
#
# A frame vector goes into the sensor node of every graph. After message
# passing, each graph's encoding node holds an 8-wide summary, and these are
# concatenated into one reasoning vector per frame. A short transformer
# looks back over the last T of them and a softmax gives normal plus one
# score per class.

# %%
import numpy as np

from missiongnn.config import Config
from missiongnn.model import MissionGnnModel
from missiongnn.synthetic import make_synthetic_dataset

cfg = Config(d_emb=64, n_concepts=8)
ds = make_synthetic_dataset(n_classes=3, n_train=4, n_test=2, frames=60, seed=1, cfg=cfg)
model = MissionGnnModel.build(ds.graphs, ds.store, T=10, seed=1, dtype=np.float64)
print(model.parameter_counts())

# %%
video = ds.manifest.split("test")[-1]
frames = ds.frames(video.video_id).astype(np.float64)
f, _ = model.frame_features(frames)
print(f.shape)  # frames x (3 graphs * 8)

# %%
s = model.score_video(frames)
print(s.shape, s.sum(axis=1)[:3])

# %% [markdown]
# Untrained, the anomaly mass barely moves across the event interval:

# %%
y = video.frame_labels()
p_a = s[:, 1:].sum(axis=1)
print("inside event  %.4f" % p_a[y != 0].mean())
print("outside event %.4f" % p_a[y == 0].mean())
