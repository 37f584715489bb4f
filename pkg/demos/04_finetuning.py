# coding: utf-8

# # Fine-tuning losses at small batch sizes

# A long document only fits in memory one or two at a time, so the loss must work without many in-batch
# negatives. OPL scores each (query, document) pair on its own.

# In[1]:

from m2lab.encoder import EncoderConfig, EncoderModel, embed_text
from m2lab.losses import opl
from m2lab.synth import generate_separable_task

task = generate_separable_task(n_docs=4, doc_len=120, repeats=4, seed=0)
query_id, query = task.queries[0]
print(query, "->", task.qrels[query_id])
print(task.documents[0][1][:120])


# OPL pushes positive cosines toward 1 and negative ones toward 0.

# In[2]:

model = EncoderModel.initialize(EncoderConfig(d_model=16, monarch_b=4, n_layers=1, max_seq_len=128))
q = embed_text(model, query)
for doc_id, text in task.documents[:2]:
    label = float(task.qrels[query_id].get(doc_id, 0))
    print(doc_id, "label", label, "loss", opl(q, embed_text(model, text), label).item())


# The ablation trains from one starting point with MNRL at batch 2, prototype loss at batch 2 and OPL at
# batch 1 under the same pair budget. Expect around a minute.

# In[3]:

from m2lab.experiments import loss_ablation

print(loss_ablation().table())


# The longer run below is the batch-1 OPL result used by the acceptance suite. It takes about two minutes.

# In[4]:

from m2lab.experiments import separable_opl

result = separable_opl()
print(f"nDCG@10 {result.baseline:.3f} -> {result.final:.3f} after {result.pair_steps} pair steps")
