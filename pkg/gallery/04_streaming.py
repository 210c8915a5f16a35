# %% [markdown]
# # Scoring a live feed
#
# The stream scorer keeps the last T reasoning vectors in a ring buffer, so
# each new frame costs one graph pass plus one window of attention. Its
# output matches scoring the whole video at once.

# %%
import io
import json

import numpy as np

from missiongnn.config import Config
from missiongnn.model import MissionGnnModel
from missiongnn.streaming import StreamScorer, run_stream
from missiongnn.synthetic import make_synthetic_dataset

ds = make_synthetic_dataset(n_classes=2, n_train=2, n_test=2, frames=200, seed=9,
                            cfg=Config(d_emb=32, n_concepts=6))
model = MissionGnnModel.build(ds.graphs, ds.store, T=16, seed=9, dtype=np.float64)
frames = ds.frames(ds.manifest.split("test")[-1].video_id).astype(np.float64)

# %%
sc = StreamScorer(model)
live = np.stack([sc.push(v) for v in frames])
print("max gap to batch scoring:", np.abs(live - model.score_video(frames)).max())
print("mean latency %.2f ms" % (1e3 * np.mean(sc.latencies)))

# %% [markdown]
# The same thing over JSON lines, which is what `missiongnn stream` reads.
# A bad line is skipped, not fatal.

# %%
lines = [json.dumps({"frame_index": t, "vector": v.tolist()}) for t, v in enumerate(frames[:5])]
lines.insert(2, "{broken")
out = io.StringIO()
print(run_stream(model, lines, out))
print(out.getvalue().splitlines()[0][:80])
