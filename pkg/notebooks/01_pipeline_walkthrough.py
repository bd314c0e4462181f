# ---
# jupyter:
#   jupytext:
#     formats: py:percent
#   kernelspec:
#     display_name: Python 3
#     language: python
#     name: python3
# ---

# %% [markdown]
# # From a review comment to clear examples
#
# This walkthrough uses the 12-review sample bundled with the package and
# follows one comment through preprocessing, TF-IDF, classification and
# retrieval.

# %%
import numpy as np

from edre.corpus import corpus_stats, sample_corpus
from edre.embed import build_vocabulary, idf, tfidf_matrix
from edre.learners import train_matrix
from edre.retrieval import build_index, explain
from edre.textprep import PrepConfig, preprocess, preprocess_text

corpus = sample_corpus()
print(corpus_stats(corpus).format_table())

# %% [markdown]
# ## Preprocessing
#
# Tokens are lowercased, stop words dropped, words lemmatized with a small
# rule table, and 1- to 3-grams become the features.

# %%
doc = preprocess_text("The loops aren't handling renamed classes properly!")
print("lemmas:  ", doc.lemmas)
print("features:", doc.features)

# %% [markdown]
# ## TF-IDF
#
# The vocabulary is built from the training documents only. Terms that
# appear in every document get the minimum weight of 1.

# %%
prep = PrepConfig()
docs = [preprocess(r.comment, prep) for r in corpus]
vocab = build_vocabulary(docs, prep=prep)
X = tfidf_matrix(docs, vocab)
print(f"{X.shape[0]} documents, {vocab.dimension} features, {X.nnz} nonzeros")
top = sorted(vocab.terms, key=lambda t: -idf(t, vocab))[:5]
print("highest idf:", [(t, round(idf(t, vocab), 3)) for t in top])
np.testing.assert_allclose(np.sqrt(X.multiply(X).sum(axis=1)).A.ravel()[np.diff(X.indptr) > 0], 1.0)

# %% [markdown]
# ## Train and explain
#
# A linear SVM is trained on the sample. Only the clear and somewhat clear
# reviews go into the example index. Twelve reviews are far too few for a
# useful model; the point here is the flow, not the predictions.  The last
# query consists of stop words only, so the model falls back to the prior.

# %%
model = train_matrix("svm", X, [r.clarity for r in corpus], seed=0, embedding_fingerprint=vocab.fingerprint, embedding=vocab)
index = build_index(corpus, vocab, min_similarity=0.05)
print(f"index holds {len(index)} of {len(corpus)} reviews")

for text in ["Hmm, why the retry loop?", "Not sure about the naming here", "Same as before, why?"]:
    decision = explain(text, model, index)
    note = " (no known terms, prior used)" if decision.low_confidence else ""
    print(f"\n{text!r} -> {decision.clarity.label}{note}")
    for hit in decision.hits:
        print(f"  {hit.rank}. {hit.similarity:.2f}  {hit.body}")
