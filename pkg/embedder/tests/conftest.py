import pytest
import torch
from transformers import BertConfig, BertModel, BertTokenizerFast

VOCAB = [
    "[PAD]", "[UNK]", "[CLS]", "[SEP]", "[MASK]",
    "the", "a", "cat", "dog", "sat", "ran", "on", "mat", "rug",
    "big", "small", "red", "blue", "fast", "slow", "##s", "##ing",
]


@pytest.fixture(scope="session")
def tiny_encoder(tmp_path_factory):
    """A full BERT checkpoint small enough to build in-process: random
    weights, 2 layers, hidden size 32, and a 22-token vocabulary."""
    root = tmp_path_factory.mktemp("encoder")
    torch.manual_seed(0)
    config = BertConfig(
        vocab_size=len(VOCAB), hidden_size=32, num_hidden_layers=2,
        num_attention_heads=2, intermediate_size=64,
        max_position_embeddings=64,
    )
    BertModel(config).save_pretrained(root)
    tokenizer = BertTokenizerFast(vocab={t: i for i, t in enumerate(VOCAB)})
    tokenizer.save_pretrained(root)
    return str(root)
