import math

import pytest
from hypothesis import given, strategies as st

from multirole import roles as rl
from multirole.roles import Endo, RoleError, Ultra


def endos(n):
    return st.tuples(*[st.integers(0, n - 1)] * n).map(Endo)


rolesets3 = st.integers(0, 7)


class TestRolesets:
    def test_fmt_parse_roundtrip(self):
        for mask in range(16):
            assert rl.parse_roleset(rl.fmt_roleset(mask)) == mask

    def test_members_complement(self):
        assert rl.members(0b101) == [0, 2]
        assert rl.complement(0b101, 3) == 0b010
        assert rl.full_set(3) == 0b111

    def test_partition(self):
        assert rl.partition_check([0b001, 0b110], 3)
        assert not rl.partition_check([0b001, 0b011], 3)  # overlap
        assert not rl.partition_check([0b001, 0b010], 3)  # misses role 2
        assert rl.partition_check([0b001, 0b110, 0b000], 3)  # empty part ok

    def test_universe_bounds(self):
        with pytest.raises(RoleError):
            rl.check_universe(0)
        with pytest.raises(RoleError):
            rl.check_universe(65)
        rl.check_universe(64)

    @given(rolesets3, rolesets3)
    def test_disjoint_union(self, a, b):
        if a & b:
            with pytest.raises(RoleError):
                rl.disjoint_union(a, b)
        else:
            assert rl.disjoint_union(a, b) == a | b


class TestEndo:
    def test_identity(self):
        f = rl.identity_endo(3)
        assert f.order() == 1
        assert [f(r) for r in range(3)] == [0, 1, 2]

    def test_swap_order_two(self):
        assert Endo((1, 0)).order() == 2

    def test_three_cycle_order_three(self):
        assert Endo((1, 2, 0)).order() == 3

    @given(endos(3), endos(3), rolesets3)
    def test_compose_preimage(self, f, g, mask):
        # (f . g)(r) = g(f(r)); preimage distributes contravariantly
        fg = f.compose(g)
        for r in range(3):
            assert fg(r) == g(f(r))
        assert fg.preimage(mask) == f.preimage(g.preimage(mask))

    @given(endos(3), rolesets3)
    def test_preimage_is_inverse_image(self, f, mask):
        pre = f.preimage(mask)
        for r in range(3):
            assert bool(pre & (1 << r)) == bool(mask & (1 << f(r)))

    @given(endos(4))
    def test_permutation_inverse(self, f):
        if not f.is_permutation():
            with pytest.raises(RoleError):
                f.inverse()
            return
        inv = f.inverse()
        assert f.compose(inv) == rl.identity_endo(4)
        assert inv.compose(f) == rl.identity_endo(4)
        # the order divides lcm of all cycle lengths <= lcm(1..4) = 12
        assert 12 % f.order() == 0

    @given(endos(4))
    def test_order_is_minimal(self, f):
        if not f.is_permutation():
            return
        k = f.order()
        g = rl.identity_endo(4)
        for i in range(1, k):
            g = g.compose(f)
            assert g != rl.identity_endo(4)
        assert g.compose(f) == rl.identity_endo(4)

    @given(endos(3))
    def test_fmt_parse(self, f):
        assert rl.parse_endo(rl.fmt_endo(f)) == f

    def test_all_endos_count(self):
        assert len(list(rl.all_endos(2))) == 4
        assert len(list(rl.all_endos(3))) == 27

    @given(endos(3), endos(3))
    def test_conjugate(self, f, g):
        if not f.is_permutation():
            return
        conj = f.conjugate(g)
        inv = f.inverse()
        # composition is diagrammatic: conjugation applies f, then g, then f^-1
        for r in range(3):
            assert conj(r) == inv(g(f(r)))


class TestUltra:
    @given(st.integers(0, 2), rolesets3)
    def test_principal_membership(self, r, mask):
        assert Ultra(r).contains(mask) == bool(mask & (1 << r))

    def test_fmt_parse(self):
        assert rl.parse_ultra("@2") == Ultra(2)
        assert rl.fmt_ultra(Ultra(0)) == "@0"

    @given(endos(3), st.integers(0, 2))
    def test_pushforward(self, f, r):
        u = Ultra(r)
        assert rl.push_ultra(f, u) == Ultra(f(r))

    @given(endos(3), st.integers(0, 2), rolesets3)
    def test_pushforward_membership_law(self, f, r, mask):
        # f(U) contains R iff U contains f^{-1}(R)
        assert rl.push_ultra(f, Ultra(r)).contains(mask) == \
            Ultra(r).contains(f.preimage(mask))
