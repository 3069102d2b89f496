# Block, overlap and global-token attention are all masked full attention in
# disguise. This script checks that on a small input, then counts score FLOPs.

import numpy as np

from longseq import attention as A
from longseq.numerics import Tensor

rng = np.random.default_rng(0)
L, h = 24, 4
Q, K, V = (Tensor(rng.standard_normal((L, h))) for _ in range(3))

# Blocks of 8; each token sees only its own block.

cfg = A.AttentionConfig(L, 8, head_dim=h)
fast = A.block_attention(Q, K, V, cfg).data
slow = A.full_attention(Q, K, V, A.build_block_mask(cfg)).data
print("block    max |diff|:", np.abs(fast - slow).max())

# Overlap widens every block by half a block on each side.

cfg = A.AttentionConfig(L, 8, overlap=True, head_dim=h)
print("overlap  max |diff|:", np.abs(A.overlap_block_attention(Q, K, V, cfg).data
                                    - A.full_attention(Q, K, V, A.build_block_mask(cfg)).data).max())

# Two global tokens per block attend everywhere and are visible to everyone.

cfg = A.AttentionConfig(L, 8, n_global=2, head_dim=h)
mask = A.build_block_mask(cfg)
print("global positions:", cfg.global_positions().tolist())
print(mask.allowed.astype(int))

# Score FLOPs: full is quadratic, blocks are linear, pooling is L * ceil(L / stride).

for L in (256, 512, 1024):
    c = A.AttentionConfig(L, 64, pool_kernel=16, pool_stride=16, head_dim=8)
    print(L, {v: A.count_score_flops(v, c) for v in ("full", "block", "pooling")})
