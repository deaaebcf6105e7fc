import numpy as np
import pytest
import torch

from quotefinder.corpus import QuoteQuery, SourceParagraph
from quotefinder.encoder import (
    BODY_START,
    CLS,
    DEFAULT_CAPS,
    EncoderConfig,
    MAX_PACKED_LEN,
    PAD,
    SEP,
    SPECIALS,
    SubwordVocab,
    TransformerEncoder,
    UNK,
    batch_tensors,
    build_vocab,
    encode,
    map_span,
    pack_input,
    token_span_to_pieces,
)
from quotefinder.errors import ValidationError


def paragraph(tokens):
    return SourceParagraph(index=0, tokens=tuple(tokens), raw_text=" ".join(tokens))


class TestVocab:
    def test_degenerate_corpus_keeps_word(self):
        vocab = build_vocab(["aaa"], 50)
        assert "aaa" in vocab.pieces
        for special in SPECIALS:
            assert special in vocab.pieces
        assert vocab.tokenize_word("aaa") == ["aaa"]

    def test_deterministic_files(self, tmp_path):
        tokens = ["ab", "ab", "cd", "ef", "ab", "cd"]
        p1, p2 = tmp_path / "v1.txt", tmp_path / "v2.txt"
        build_vocab(tokens, 60).save(p1)
        build_vocab(iter(tokens), 60).save(p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_size_floor(self):
        with pytest.raises(ValidationError):
            build_vocab(["a"], 30)

    def test_every_token_tokenizes(self):
        words = [f"word{i}" for i in range(200)] + ["shared"] * 50
        vocab = build_vocab(words, 80)  # too small for all words: char fallback
        for word in set(words):
            pieces = vocab.tokenize_word(word)
            assert pieces, word
            assert all(p in vocab.piece_to_id for p in pieces)

    def test_unknown_alphabet_becomes_unk(self):
        vocab = build_vocab(["abc"], 50)
        assert vocab.tokenize_word("日本") == [UNK]

    def test_greedy_longest_match(self):
        vocab = SubwordVocab(list(SPECIALS) + ["play", "##ing", "##i", "##n", "##g", "p", "l", "a", "y"])
        assert vocab.tokenize_word("playing") == ["play", "##ing"]

    def test_save_load_roundtrip(self, tmp_path):
        vocab = build_vocab(["alpha", "beta", "beta"], 64)
        vocab.save(tmp_path / "v.txt")
        loaded = SubwordVocab.load(tmp_path / "v.txt")
        assert loaded.pieces == vocab.pieces
        assert loaded.content_hash() == vocab.content_hash()

    def test_lowercasing(self):
        vocab = build_vocab(["Mixed", "CASE"], 64)
        assert "mixed" in vocab.pieces
        assert vocab.tokenize_word("MIXED") == ["mixed"]


@pytest.fixture(scope="module")
def vocab():
    words = [f"w{i}" for i in range(300)] + ["title", "ctx", "para"]
    return build_vocab(words * 2, 400)


class TestPackInput:
    def test_layout_with_empty_context(self, vocab):
        query = QuoteQuery(title=("title",), left_context=())
        packed = pack_input(query, paragraph(["para"]), vocab)
        pieces = [vocab.pieces[i] for i in packed.ids]
        assert pieces == [CLS, "title", BODY_START, SEP, "para", SEP]
        assert packed.segment_ids == (0, 0, 0, 0, 1, 1)
        assert packed.paragraph_piece_range == (4, 4)

    def test_context_keeps_last_100_pieces(self, vocab):
        query = QuoteQuery(title=("title",), left_context=tuple(f"w{i}" for i in range(150)))
        packed = pack_input(query, paragraph(["para"]), vocab)
        pieces = [vocab.pieces[i] for i in packed.ids]
        sep = pieces.index(SEP)
        context = pieces[pieces.index(BODY_START) + 1 : sep]
        assert len(context) == 100
        assert context[0] == "w50" and context[-1] == "w149"

    def test_title_keeps_first_20_pieces(self, vocab):
        query = QuoteQuery(title=tuple(f"w{i}" for i in range(30)), left_context=())
        packed = pack_input(query, paragraph(["para"]), vocab)
        pieces = [vocab.pieces[i] for i in packed.ids]
        title = pieces[1 : pieces.index(BODY_START)]
        assert title == [f"w{i}" for i in range(20)]

    def test_paragraph_keeps_first_200_pieces(self, vocab):
        query = QuoteQuery(title=("title",), left_context=())
        packed = pack_input(query, paragraph([f"w{i % 250}" for i in range(250)]), vocab)
        first, last = packed.paragraph_piece_range
        assert last - first + 1 == 200
        assert len(packed.piece_to_token) == 200
        assert packed.piece_to_token[0] == 0 and packed.piece_to_token[-1] == 199

    def test_length_bound_and_special_positions(self, vocab):
        rng = np.random.default_rng(0)
        for _ in range(50):
            query = QuoteQuery(
                title=tuple(f"w{rng.integers(300)}" for _ in range(rng.integers(0, 40))),
                left_context=tuple(f"w{rng.integers(300)}" for _ in range(rng.integers(0, 160))),
            )
            para = paragraph([f"w{rng.integers(300)}" for _ in range(rng.integers(1, 260))])
            packed = pack_input(query, para, vocab)
            assert len(packed) <= MAX_PACKED_LEN
            first, last = packed.paragraph_piece_range
            specials = {vocab.cls_id, vocab.body_start_id, vocab.sep_id}
            assert not specials.intersection(packed.ids[first : last + 1])

    def test_ablation_caps_respected(self, vocab):
        query = QuoteQuery(title=("title", "w1"), left_context=tuple(f"w{i}" for i in range(80)))
        packed = pack_input(query, paragraph(["para"] * 5), vocab, caps=(0, 10, 200))
        pieces = [vocab.pieces[i] for i in packed.ids]
        assert pieces[1] == BODY_START  # no title pieces
        context = pieces[2 : pieces.index(SEP)]
        assert len(context) == 10
        assert context[-1] == "w79"


class TestMapSpan:
    def test_identity_for_single_piece_tokens(self, vocab):
        query = QuoteQuery(title=("title",), left_context=("ctx",))
        packed = pack_input(query, paragraph(["w1", "w2", "w3"]), vocab)
        first, _ = packed.paragraph_piece_range
        assert map_span((first, first + 2), packed) == (0, 2)
        assert token_span_to_pieces((0, 2), packed) == (first, first + 2)

    def test_multi_piece_word_containment(self):
        vocab = SubwordVocab(list(SPECIALS) + ["t", "xy", "##z", "##q", "x", "y", "z", "q"])
        # "xyzq" -> xy ##z ##q (3 pieces, one token)
        query = QuoteQuery(title=("t",), left_context=())
        packed = pack_input(query, paragraph(["xyzq", "t"]), vocab)
        first, last = packed.paragraph_piece_range
        assert last - first + 1 == 4
        assert map_span((first + 1, first + 2), packed) == (0, 0)
        assert token_span_to_pieces((0, 0), packed) == (first, first + 2)

    def test_out_of_range_errors(self, vocab):
        query = QuoteQuery(title=("title",), left_context=())
        packed = pack_input(query, paragraph(["w1"]), vocab)
        with pytest.raises(ValidationError):
            map_span((0, packed.paragraph_piece_range[1]), packed)
        with pytest.raises(ValidationError):
            token_span_to_pieces((0, 5), packed)

    def test_random_roundtrips(self, vocab):
        rng = np.random.default_rng(3)
        query = QuoteQuery(title=("title",), left_context=("ctx",))
        for _ in range(1000):
            n_tokens = int(rng.integers(1, 40))
            para = paragraph([f"w{rng.integers(300)}" for _ in range(n_tokens)])
            packed = pack_input(query, para, vocab)
            a = int(rng.integers(0, n_tokens))
            b = int(rng.integers(a, n_tokens))
            i, j = token_span_to_pieces((a, b), packed)
            assert map_span((i, j), packed) == (a, b)


class TestEncoder:
    def small_encoder(self, vocab, seed=0):
        config = EncoderConfig(vocab_size=len(vocab), hidden_size=16, num_layers=2,
                               num_heads=2, ff_size=32, seed=seed)
        return TransformerEncoder(config)

    def test_output_shapes(self, vocab):
        encoder = self.small_encoder(vocab)
        query = QuoteQuery(title=("title",), left_context=("ctx", "ctx"))
        packed = pack_input(query, paragraph(["w1", "w2"]), vocab)
        out = encode(packed, encoder, vocab.pad_id)
        assert out.token_vectors.shape == (len(packed), 16)
        assert torch.equal(out.pooled, out.token_vectors[0])
        assert torch.isfinite(out.token_vectors).all()

    def test_query_side_shared_outputs_differ(self, vocab):
        encoder = self.small_encoder(vocab)
        query = QuoteQuery(title=("title",), left_context=("ctx",))
        p1 = pack_input(query, paragraph(["w1", "w2"]), vocab)
        p2 = pack_input(query, paragraph(["w3", "w4"]), vocab)
        assert p1.ids[: p1.paragraph_piece_range[0]] == p2.ids[: p2.paragraph_piece_range[0]]
        o1, o2 = encode(p1, encoder, vocab.pad_id), encode(p2, encoder, vocab.pad_id)
        assert not torch.allclose(o1.pooled, o2.pooled)

    def test_fresh_init_deterministic(self, vocab):
        query = QuoteQuery(title=("title",), left_context=())
        packed = pack_input(query, paragraph(["w1"]), vocab)
        o1 = encode(packed, self.small_encoder(vocab, seed=9), vocab.pad_id)
        o2 = encode(packed, self.small_encoder(vocab, seed=9), vocab.pad_id)
        assert torch.equal(o1.pooled, o2.pooled)
        o3 = encode(packed, self.small_encoder(vocab, seed=10), vocab.pad_id)
        assert not torch.equal(o1.pooled, o3.pooled)

    def test_padding_does_not_change_outputs(self, vocab):
        encoder = self.small_encoder(vocab)
        encoder.eval()
        query = QuoteQuery(title=("title",), left_context=())
        short = pack_input(query, paragraph(["w1"]), vocab)
        long = pack_input(query, paragraph([f"w{i}" for i in range(40)]), vocab)
        alone = encode(short, encoder, vocab.pad_id).pooled
        ids, segs, mask = batch_tensors([short, long], vocab.pad_id)
        with torch.no_grad():
            batched = encoder(ids, segs, mask)[0, 0]
        assert torch.allclose(alone, batched, atol=1e-6)

    def test_config_validation(self):
        with pytest.raises(ValidationError):
            EncoderConfig(vocab_size=100, hidden_size=10, num_heads=4)
        with pytest.raises(ValidationError):
            EncoderConfig(vocab_size=100, max_len=64)

    def test_too_long_sequence_rejected(self, vocab):
        encoder = self.small_encoder(vocab)
        ids = torch.zeros((1, MAX_PACKED_LEN + 1), dtype=torch.long)
        segs = torch.zeros_like(ids)
        mask = torch.ones_like(ids)
        with pytest.raises(ValidationError):
            encoder(ids, segs, mask)

    def test_parameter_gradients_match_finite_differences(self, vocab):
        # scalar probe: sum of the pooled vector, float64, 2-layer h=16
        torch.manual_seed(0)
        encoder = self.small_encoder(vocab).double()
        encoder.eval()
        query = QuoteQuery(title=("title", "w3"), left_context=("ctx", "w5"))
        packed = pack_input(query, paragraph(["w1", "w2", "w3"]), vocab)
        ids, segs, mask = batch_tensors([packed], vocab.pad_id)

        def probe():
            return encoder(ids, segs, mask)[0, 0].sum()

        loss = probe()
        loss.backward()
        rng = np.random.default_rng(0)
        eps = 1e-6
        checked = 0
        for name, param in encoder.named_parameters():
            flat = param.detach().view(-1)
            grad = param.grad.detach().view(-1)
            for index in rng.choice(flat.numel(), size=min(3, flat.numel()), replace=False):
                original = flat[index].item()
                with torch.no_grad():
                    flat[index] = original + eps
                    up = probe().item()
                    flat[index] = original - eps
                    down = probe().item()
                    flat[index] = original
                numeric = (up - down) / (2 * eps)
                analytic = grad[index].item()
                # absolute floor absorbs central-difference noise (~1e-10)
                # on parameters the probe barely touches
                assert abs(numeric - analytic) < 1e-7 + 1e-4 * max(abs(numeric), abs(analytic)), \
                    (name, int(index))
                checked += 1
        assert checked > 50
