import numpy as np
import pytest

from hoigen import encoders, synth
from hoigen import tokenizer as tkz


@pytest.fixture(scope="session")
def objects():
    return synth.build_object_library()


@pytest.fixture(scope="session")
def small_corpus(objects):
    return synth.generate_corpus(60, seed=1, objects=objects)


@pytest.fixture(scope="session")
def fake_obj_embs(objects):
    # deterministic stand-in embeddings; the real encoder is exercised in
    # test_encoders and the acceptance suite
    rng = np.random.default_rng(0)
    return {k: rng.normal(size=encoders.D_POINT).astype(np.float32) for k in objects}


@pytest.fixture(scope="session")
def point_encoder():
    enc, acc = encoders.pretrain_point_encoder(seed=0)
    return enc, acc


@pytest.fixture(scope="session")
def tiny_tok(small_corpus, objects, fake_obj_embs):
    cfg = tkz.TokenizerConfig()
    tok, info = tkz.train_tokenizer(small_corpus, objects, fake_obj_embs, cfg,
                                    seed=0, epochs=8, batch_size=8, lr=1e-3)
    return tok, info


@pytest.fixture(scope="session")
def tiny_gen(small_corpus, tiny_tok, fake_obj_embs):
    from hoigen import generation as gen
    tok, _ = tiny_tok
    model, info = gen.train_generator(small_corpus, tok, fake_obj_embs,
                                      gen.GeneratorConfig(), seed=0, epochs=12,
                                      batch_size=16, lr=1e-3)
    return model, info
