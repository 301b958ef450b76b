import pytest

from patrol import proto
from patrol.security import AuthPolicy
from patrol.taskmodel import (
    AgentClassId,
    BadSignature,
    BundleStore,
    CodeBundle,
    Comparator,
    FilterPredicate,
    InvalidForm,
    PollMode,
    ServiceType,
    StaleVersion,
    TaskProgram,
    ThresholdExpr,
    ThresholdSpec,
    bundle_digest,
    compare,
    generate_bundle,
    validate_bundle,
)


def table_filter_program(**overrides) -> TaskProgram:
    base = dict(
        service_type=ServiceType.TABLE_FILTER,
        oids=("1.3.6.1.2.1.6.13",),
        filter=FilterPredicate(1, Comparator.GT, 10),
        poll_mode=PollMode.PERIODIC,
        frequency_s=15,
    )
    base.update(overrides)
    return TaskProgram(**base)


class TestGenerate:
    def test_table_filter_bundle(self, keys):
        bundle = generate_bundle(
            "tcpConnTableFiltering", table_filter_program(), 1, keys.private_key
        )
        assert bundle.class_id == AgentClassId("tcpConnTableFiltering", 1)
        assert bundle.program.frequency_s == 15
        assert not bundle.program.encrypt
        validate_bundle(bundle, {keys.key_id: keys.public_key})

    def test_encrypt_flag_carried(self, keys):
        program = TaskProgram(
            service_type=ServiceType.SCALAR_POLL,
            oids=("1.3.6.1.2.1.2.2.1.10.1",),
            poll_mode=PollMode.PERIODIC,
            frequency_s=20,
            encrypt=True,
        )
        bundle = generate_bundle("ifTablePolling", program, 1, keys.private_key)
        assert bundle.program.encrypt

    def test_missing_filter_rejected(self, keys):
        with pytest.raises(InvalidForm) as err:
            generate_bundle(
                "broken", table_filter_program(filter=None), 1, keys.private_key
            )
        assert "filter" in err.value.fields

    def test_empty_oids_rejected(self, keys):
        with pytest.raises(InvalidForm) as err:
            generate_bundle("broken", table_filter_program(oids=()), 1, keys.private_key)
        assert "oids" in err.value.fields

    def test_periodic_needs_frequency(self, keys):
        with pytest.raises(InvalidForm) as err:
            generate_bundle(
                "broken", table_filter_program(frequency_s=0), 1, keys.private_key
            )
        assert "frequency_s" in err.value.fields

    def test_threshold_required(self, keys):
        program = TaskProgram(
            service_type=ServiceType.THRESHOLD_MONITOR,
            oids=("1.3.6.1.2.1.1.3.0",),
            poll_mode=PollMode.ONE_SHOT,
        )
        with pytest.raises(InvalidForm) as err:
            generate_bundle("broken", program, 1, keys.private_key)
        assert "threshold" in err.value.fields

    def test_generation_deterministic(self, keys):
        a = generate_bundle("t", table_filter_program(), 3, keys.private_key, created_at=1000)
        b = generate_bundle("t", table_filter_program(), 3, keys.private_key, created_at=1000)
        assert proto.canonical_encode(a) == proto.canonical_encode(b)


class TestValidate:
    def test_fresh_bundle_ok(self, keys):
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key)
        validate_bundle(bundle, {keys.key_id: keys.public_key}, latest_version=None)

    def test_same_version_stale(self, keys):
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key)
        with pytest.raises(StaleVersion):
            validate_bundle(bundle, {keys.key_id: keys.public_key}, latest_version=1)

    def test_lower_version_stale(self, keys):
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key)
        with pytest.raises(StaleVersion):
            validate_bundle(bundle, {keys.key_id: keys.public_key}, latest_version=2)

    def test_altered_bundle_bad_signature(self, keys):
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key)
        altered = CodeBundle(
            class_id=bundle.class_id,
            program=table_filter_program(frequency_s=99),
            created_at=bundle.created_at,
            policy=bundle.policy,
            signature=bundle.signature,
        )
        with pytest.raises(BadSignature):
            validate_bundle(altered, {keys.key_id: keys.public_key})

    def test_untrusted_signer(self, keys, other_keys):
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key)
        with pytest.raises(BadSignature):
            validate_bundle(bundle, {other_keys.key_id: other_keys.public_key})


class TestDigestAndCodec:
    def test_digest_stable_under_reencoding(self, keys):
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key)
        decoded = proto.canonical_decode(CodeBundle, proto.canonical_encode(bundle))
        assert bundle_digest(bundle) == bundle_digest(decoded)
        assert decoded == bundle

    def test_digest_differs_on_field_change(self, keys):
        a = generate_bundle("t", table_filter_program(), 1, keys.private_key, created_at=5)
        b = generate_bundle("t", table_filter_program(frequency_s=30), 1, keys.private_key, created_at=5)
        assert bundle_digest(a) != bundle_digest(b)

    def test_digest_length(self, keys):
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key)
        assert len(bundle_digest(bundle)) == 32

    def test_program_round_trip(self):
        program = TaskProgram(
            service_type=ServiceType.THRESHOLD_MONITOR,
            oids=("1.3.6.1.2.1.1.3.0", "1.3.6.1.2.1.4.8.0"),
            threshold=ThresholdSpec(ThresholdExpr.DELTA_PER_SECOND, Comparator.GE, 2.5),
            poll_mode=PollMode.ONE_SHOT,
            encrypt=True,
            device_class="routers",
        )
        assert proto.canonical_decode(TaskProgram, proto.canonical_encode(program)) == program

    def test_policy_carried(self, keys):
        policy = AuthPolicy(max_oids_per_query=7)
        bundle = generate_bundle("t", table_filter_program(), 1, keys.private_key, policy=policy)
        decoded = proto.canonical_decode(CodeBundle, proto.canonical_encode(bundle))
        assert decoded.policy.max_oids_per_query == 7


class TestBundleStore:
    def test_version_sequence(self, keys, tmp_path):
        store = BundleStore(tmp_path)
        assert store.next_version("t") == 1
        for expected in (1, 2, 3):
            bundle = generate_bundle("t", table_filter_program(), expected, keys.private_key)
            store.store(bundle)
            assert store.latest_version("t") == expected
        assert store.next_version("t") == 4
        assert store.versions("t") == [1, 2, 3]
        assert (tmp_path / "t.2.bundle").exists()

    def test_load_latest(self, keys, tmp_path):
        store = BundleStore(tmp_path)
        store.store(generate_bundle("a", table_filter_program(), 1, keys.private_key))
        store.store(generate_bundle("a", table_filter_program(), 2, keys.private_key))
        loaded = store.load_latest("a")
        assert loaded.class_id.version == 2
        assert store.load_latest("missing") is None
        assert store.names() == ["a"]


class TestCompare:
    @pytest.mark.parametrize(
        "cmp,left,right,expected",
        [
            (Comparator.EQ, 5, 5, True),
            (Comparator.NE, 5, 5, False),
            (Comparator.LT, 3, 12, True),
            (Comparator.LE, 12, 12, True),
            (Comparator.GT, 12, 10, True),
            (Comparator.GE, 9, 10, False),
            (Comparator.EQ, "up", "up", True),
            (Comparator.LT, "abc", "abd", True),
            (Comparator.EQ, "5", 5, False),
            (Comparator.NE, "5", 5, True),
            (Comparator.GT, "5", 5, False),
        ],
    )
    def test_semantics(self, cmp, left, right, expected):
        assert compare(cmp, left, right) is expected

    def test_predicate_matches(self):
        predicate = FilterPredicate(1, Comparator.GT, 10)
        assert predicate.matches([1, 12])
        assert not predicate.matches([1, 3])
        assert not predicate.matches([1])
