"""Independent numeric oracles used across the test suite.

Everything here is deliberately written against the definitions (direct
quadrature of the defining integrals, explicit loops) rather than against
the library code it checks.  Integrable endpoint singularities are removed
by power substitutions before applying composite Gauss-Legendre rules.
"""

import math

import numpy as np


def gl_integral(f, a, b, n_nodes=240, panels=4):
    """Composite Gauss-Legendre quadrature of f on [a, b]."""
    nodes, weights = np.polynomial.legendre.leggauss(n_nodes)
    total = 0.0
    edges = np.linspace(a, b, panels + 1)
    for lo, hi in zip(edges[:-1], edges[1:]):
        mid = 0.5 * (lo + hi)
        half = 0.5 * (hi - lo)
        total += half * np.sum(weights * f(mid + half * nodes))
    return float(total)


def erf_quad(x):
    """erf by direct quadrature of its defining integral."""
    if x < 0:
        return -erf_quad(-x)
    if x == 0:
        return 0.0
    return 2.0 / math.sqrt(math.pi) * gl_integral(lambda t: np.exp(-t * t), 0.0, x)


def erfc_quad(x):
    return 1.0 - erf_quad(x)


def lower_gamma_quad(s, x):
    """gamma(s, x) = integral of t^(s-1) e^-t over [0, x].

    Substituting t = u^2 maps the integrand to 2 u^(2s-1) exp(-u^2),
    which is smooth at the origin for every s >= 1/2 (all the
    half-integer shapes exercised here).
    """
    if x == 0:
        return 0.0
    return 2.0 * gl_integral(
        lambda u: u ** (2.0 * s - 1.0) * np.exp(-u * u), 0.0, math.sqrt(x)
    )


def reg_beta_quad(x, a, b):
    """I_x(a, b) by quadrature of the defining integral.

    Substituting t = sin(theta)^2 turns t^(a-1) (1-t)^(b-1) dt into
    2 sin^(2a-1) cos^(2b-1) d(theta), smooth at both endpoints for
    a, b >= 1/2; the symmetry flip keeps the upper tail conditioned.
    """
    if x == 0.0:
        return 0.0
    if x == 1.0:
        return 1.0
    if x > 0.5:
        return 1.0 - reg_beta_quad(1.0 - x, b, a)
    ln_beta = math.lgamma(a) + math.lgamma(b) - math.lgamma(a + b)
    integral = 2.0 * gl_integral(
        lambda th: np.sin(th) ** (2.0 * a - 1.0) * np.cos(th) ** (2.0 * b - 1.0),
        0.0,
        math.asin(math.sqrt(x)),
    )
    return integral / math.exp(ln_beta)


def fnv1a64_reference(value):
    """Byte-at-a-time FNV-1a over the 8-byte little-endian encoding."""
    h = 0xCBF29CE484222325
    for byte in int(value).to_bytes(8, "little", signed=False):
        h ^= byte
        h = (h * 0x100000001B3) % (1 << 64)
    return h


def softmax_reference(row):
    m = max(row)
    exps = [math.exp(v - m) for v in row]
    s = sum(exps)
    return [e / s for e in exps]


def straight_line_moe_forward(tokens, expert_of_token, gate, dropped, experts):
    """Token-by-token expert mixing with explicit loops and libm erf."""
    t, d = tokens.shape
    out = np.empty((t, d))
    for m in range(t):
        if dropped[m]:
            out[m] = tokens[m]
            continue
        p = experts[expert_of_token[m]]
        hidden = []
        for i in range(p.w_in.shape[0]):
            z = sum(p.w_in[i, j] * tokens[m, j] for j in range(d))
            hidden.append(z * 0.5 * (1.0 + math.erf(z / math.sqrt(2.0))))
        for j in range(d):
            out[m, j] = gate[m] * sum(
                p.w_out[j, i] * hidden[i] for i in range(len(hidden))
            )
    return out


def ring_alltoall_reference(volume, n_nodes, devices_per_node,
                            intra_bw, inter_bw, intra_lat, inter_lat):
    """Straight-line evaluation of the ring-scheduled pairwise exchange."""
    d = n_nodes * devices_per_node
    total = 0.0
    for r in range(1, d):
        worst = 0.0
        for s in range(d):
            t = (s + r) % d
            if s // devices_per_node == t // devices_per_node:
                cost = intra_lat + volume[s][t] / intra_bw
            else:
                cost = inter_lat + volume[s][t] / inter_bw
            worst = max(worst, cost)
        total += worst
    return total
