# coding: utf-8

# # Masked language model pretraining on the desk corpora

# Three synthetic sources stand in for web text, encyclopedia text and fiction. Pretraining samples short and
# full-window examples from all three and predicts masked bytes.

# In[1]:

import itertools

from m2lab.corpora import desk_sources
from m2lab.encoder import EncoderConfig
from m2lab.training import MixtureSpec, build_mixture, mlm_accuracy, pretrain

sources = desk_sources(60, seed=0)
for name, src in zip(("web", "wiki", "books"), sources):
    print(f"{name:5s}", src[0][:90])


# The default mixture puts 30% of draws on variable-length examples and 70% on full-window ones.

# In[2]:

spec = MixtureSpec()
for source, kind, weight in spec.weights:
    print(source, kind, weight)
draws = list(itertools.islice(build_mixture(sources, spec, 128, seed=1), 6))
print([(d.source, d.kind, len(d.ids)) for d in draws])


# A small model learns the byte statistics within a couple hundred steps.

# In[3]:

config = EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=128, seed=0)
model, metrics = pretrain(config, build_mixture(sources, spec, 128, seed=1), steps=200, seed=1,
                          batch_size=4, peak_lr=3e-3)
for m in metrics[::40] + metrics[-1:]:
    print(f"step {m.step:4d}  lr {m.lr:.2e}  loss {m.loss:.3f}  acc {m.mlm_accuracy:.3f}")


# In[4]:

held_out = [e.ids for e in itertools.islice(build_mixture(desk_sources(20, seed=9), MixtureSpec.only("maximum"),
                                                          128, seed=3), 8)]
print("held-out MLM accuracy:", mlm_accuracy(model, held_out, config.mlm_mask_prob, seed=0))


# The warm versus cold comparison runs the same loop at two lengths. It takes under a minute.

# In[5]:

from m2lab.experiments import warm_vs_cold

print(warm_vs_cold().table())
