"""Heat2D and HPCCG benchmarks in rank-only, fork-join and hdot modes."""

MODES = ("rank-only", "forkjoin", "hdot")
