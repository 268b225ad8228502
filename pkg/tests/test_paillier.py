import math
import random

import pytest

from amiagg.paillier import (MalformedCiphertext, PaillierCiphertext,
                             PlaintextOutOfRange, add_ciphertexts, decrypt,
                             encrypt, keygen)
from amiagg.vector import (Appliance, ApplianceReading, CodecConfig, Level,
                           encode, pack, unpack, vec_add)


@pytest.fixture(scope="module")
def kp128():
    pk, sk = keygen(128, random.Random(1311))
    return pk, sk


def test_keygen_reproducible_under_seed():
    a = keygen(64, random.Random(9))
    b = keygen(64, random.Random(9))
    assert (a[0].n, a[1].lam, a[1].mu) == (b[0].n, b[1].lam, b[1].mu)
    c = keygen(64, random.Random(10))
    assert c[0].n != a[0].n


@pytest.mark.parametrize("bits", [64, 96, 128])
def test_modulus_size_within_one_bit(bits):
    pk, _ = keygen(bits, random.Random(bits))
    assert abs(pk.n.bit_length() - bits) <= 1
    assert pk.n_sq == pk.n * pk.n
    assert pk.g == pk.n + 1


def test_keygen_structure():
    pk, sk = keygen(64, random.Random(3))
    assert math.gcd(pk.n, sk.lam) == 1
    assert sk.mu == pow(sk.lam, -1, pk.n)


def test_roundtrip_100_random_messages(kp128):
    pk, sk = kp128
    rng = random.Random(21)
    for _ in range(100):
        m = rng.randrange(pk.n)
        assert decrypt(sk, pk, encrypt(pk, m, rng)) == m


def test_encrypt_zero(kp128):
    pk, sk = kp128
    assert decrypt(sk, pk, encrypt(pk, 0, random.Random(4))) == 0


def test_encryption_is_probabilistic(kp128):
    pk, sk = kp128
    rng = random.Random(5)
    c1, c2 = encrypt(pk, 5, rng), encrypt(pk, 5, rng)
    assert c1.value != c2.value
    assert decrypt(sk, pk, c1) == decrypt(sk, pk, c2) == 5


def test_plaintext_range_boundary(kp128):
    pk, _ = kp128
    rng = random.Random(6)
    encrypt(pk, pk.n - 1, rng)
    with pytest.raises(PlaintextOutOfRange):
        encrypt(pk, pk.n, rng)
    with pytest.raises(PlaintextOutOfRange):
        encrypt(pk, -1, rng)


def test_additive_identity(kp128):
    pk, sk = kp128
    rng = random.Random(7)
    x = rng.randrange(pk.n)
    combined = add_ciphertexts(pk, encrypt(pk, 0, rng), encrypt(pk, x, rng))
    assert decrypt(sk, pk, combined) == x


def test_add_25_and_12_gives_37(kp128):
    pk, sk = kp128
    rng = random.Random(8)
    c = add_ciphertexts(pk, encrypt(pk, 25, rng), encrypt(pk, 12, rng))
    assert decrypt(sk, pk, c) == 37


def test_fold_255_ones_counts_to_255(kp128):
    pk, sk = kp128
    rng = random.Random(9)
    acc = encrypt(pk, 1, rng)
    for _ in range(254):
        acc = add_ciphertexts(pk, acc, encrypt(pk, 1, rng))
    assert decrypt(sk, pk, acc) == 255


def test_homomorphism_1000_pairs(kp128):
    pk, sk = kp128
    rng = random.Random(10)
    for _ in range(1000):
        m1, m2 = rng.randrange(pk.n), rng.randrange(pk.n)
        c = add_ciphertexts(pk, encrypt(pk, m1, rng), encrypt(pk, m2, rng))
        assert decrypt(sk, pk, c) == (m1 + m2) % pk.n


def test_tampered_ciphertext_changes_plaintext(kp128):
    # decrypt can't detect tampering; the oracle here is plaintext inequality
    pk, sk = kp128
    rng = random.Random(11)
    m = 424242
    c = encrypt(pk, m, rng)
    tampered = PaillierCiphertext(value=(c.value * pk.g) % pk.n_sq)
    assert decrypt(sk, pk, tampered) == (m + 1) % pk.n != m


def test_malformed_ciphertext_rejected(kp128):
    pk, sk = kp128
    with pytest.raises(MalformedCiphertext):
        decrypt(sk, pk, PaillierCiphertext(value=pk.n))  # shares a factor
    with pytest.raises(MalformedCiphertext):
        decrypt(sk, pk, PaillierCiphertext(value=0))


def test_ciphertext_serialization_roundtrip(kp128):
    pk, _ = kp128
    rng = random.Random(12)
    c = encrypt(pk, 97, rng)
    blob = c.to_bytes(pk)
    assert len(blob) == 2 * pk.modulus_bytes
    assert PaillierCiphertext.from_bytes(pk, blob) == c
    with pytest.raises(ValueError):
        PaillierCiphertext.from_bytes(pk, blob[:-1])


def test_keygen_rejects_tiny_sizes():
    with pytest.raises(ValueError):
        keygen(8, random.Random(1))


def test_packed_vector_aggregation_matches_vec_add():
    """Encrypt packed vectors, sum homomorphically, decrypt, unpack: the
    result must equal the plaintext field-wise sum — the baseline speaks the
    exact same vector format as the masked pipeline."""
    cfg = CodecConfig()
    pk, sk = keygen(384, random.Random(77))  # N must exceed 312 packed bits
    rng = random.Random(78)
    vecs = [
        encode([ApplianceReading.on(Appliance.WATER_HEATER, Level.MEDIUM, 25),
                ApplianceReading.on(Appliance.EV_CHARGER, Level.LOW, 12),
                ApplianceReading.on(Appliance.HVAC, Level.HIGH, 35),
                ApplianceReading.uncontrollable(125)], cfg),
        encode([ApplianceReading.on(Appliance.WATER_HEATER, Level.MEDIUM, 25),
                ApplianceReading.uncontrollable(50)], cfg),
        encode([ApplianceReading.on(Appliance.DRYER, Level.HIGH, 90)], cfg),
    ]
    acc = None
    for v in vecs:
        c = encrypt(pk, pack(v, cfg), rng)
        acc = c if acc is None else add_ciphertexts(pk, acc, c)
    expected = vec_add(vec_add(vecs[0], vecs[1], cfg), vecs[2], cfg)
    assert unpack(decrypt(sk, pk, acc), cfg).values == expected.values
