# %% [markdown]
# # Reasoning graphs
#
# Each anomaly class gets its own layered graph: a sensor node on top, key
# concepts below it, a layer or two of related words, and one encoding node
# that collects everything. Here we build one with the offline stand-ins for
# the chat model and ConceptNet, so nothing touches the network.

# %%
from missiongnn.kg import FileConceptNet, MissionSpec, SyntheticLlm, generate_graph, validate_graph

mission = MissionSpec("shooting", "Shooting", n_concepts=6, sub_depth=1)
g = generate_graph(mission, SyntheticLlm(seed=0), FileConceptNet())
print(len(g.nodes), "nodes,", len(g.edges), "edges")

# %% [markdown]
# Layers, top to bottom:

# %%
for depth in sorted({n.layer_index for n in g.nodes}):
    print(depth, [n.label or n.kind for n in g.layer(depth)])

# %% [markdown]
# The generator is told to make mistakes now and then (repeated words,
# parents that don't exist). The trace keeps every correction round.

# %%
noisy = SyntheticLlm(seed=3, dup_rate=0.4, bad_parent_rate=0.4, fix_prob=0.5)
g2 = generate_graph(mission, noisy, FileConceptNet())
events = [t["event"] for t in g2.generation_trace if "event" in t]
print({e: events.count(e) for e in set(events)})
print("problems:", validate_graph(g2))
