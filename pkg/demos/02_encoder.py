# coding: utf-8

# # The encoder end to end

# Text goes in as bytes and comes out as one unit-length vector. Here we build the default configuration,
# count its parameters and look at what the embedding ignores and what it does not.

# In[1]:

import numpy as np

from m2lab import tokenizer as tok
from m2lab.encoder import EncoderConfig, EncoderModel, count_params, embed_text, extend_model, working_length

model = EncoderModel.initialize(EncoderConfig())
print(model.config)
print("parameters:", count_params(model))


# Each byte is one token and a few ids above 255 are reserved for specials.

# In[2]:

ids = tok.tokenize("long documents")
print(ids)
print(tok.detokenize(ids))


# A short text does not pay for the full window. The convolutions run at the smallest power of two that holds
# twice the text, so padding never leaks into the result.

# In[3]:

for n in (5, 40, 200, 600):
    print(n, "tokens ->", working_length(n, model.max_seq_len))


# In[4]:

a = embed_text(model, "the cat sat on the mat").values
b = embed_text(model, "the cat sat on the mat").values
c = embed_text(model, "a completely different sentence").values
print("norm:", np.linalg.norm(a), " same text:", a @ b, " other text:", a @ c)


# Extending the window tiles the positional table and pads the convolution kernels with zeros, so a short text
# embeds identically before and after the extension.

# In[5]:

longer = extend_model(model, 4096)
print("window:", model.max_seq_len, "->", longer.max_seq_len)
print("same embedding:", np.allclose(embed_text(longer, "the cat sat on the mat").values, a))
