"""Closed-form parameter counts, derived by hand from the layer lists.

Kept free of any package import so it cannot share a bug with the model
builders.  Conv weight = in*out*k (+ out bias), dense = in*out + out,
batch norm = 2*channels (running stats are buffers, not parameters).
"""


def conv(cin, cout, k, bias=True):
    return cin * cout * k + (cout if bias else 0)


def dense(nin, nout):
    return nin * nout + nout


def bn(c):
    return 2 * c


def ekyt(L, cin=4):
    total = 0
    width = cin
    for _ in range(8):
        total += conv(width, 32, 3) + bn(32)
        width += 32
    assert width == 260
    return total + dense(260, 128) + bn(128) + dense(128, 2)


def fcn(L, cin=4):
    return (conv(cin, 128, 8) + bn(128) + conv(128, 256, 5) + bn(256)
            + conv(256, 128, 3) + bn(128) + dense(128, 2))


def tcn(L, cin=4):
    return conv(cin, 64, 3) + conv(64, 128, 3) + conv(128, 256, 3) + dense(256, 2)


def inception(L, cin=4):
    total = 0
    width = cin
    for _ in range(6):
        # bottleneck whenever the block input has more than one channel
        branch_in = 32 if width > 1 else width
        if width > 1:
            total += conv(width, 32, 1, bias=False)
        for k in (8, 4, 2):
            total += conv(branch_in, 32, k, bias=False)
        total += conv(width, 32, 1, bias=False)  # after the max-pool
        total += bn(128)
        width = 128
    total += conv(cin, 128, 1, bias=False) + bn(128)   # shortcut into block 3
    total += conv(128, 128, 1, bias=False) + bn(128)   # shortcut into block 6
    return total + dense(128, 2)


def mcdcnn(L, cin=4):
    per_channel = conv(1, 8, 5) + conv(8, 8, 5)
    flat = cin * 8 * ((L // 2) // 2)
    return cin * per_channel + dense(flat, 732) + dense(732, 2)


def tlenet(L, cin=4):
    flat = 20 * ((L // 2) // 4)
    return conv(cin, 5, 5) + conv(5, 20, 5) + dense(flat, 500) + dense(500, 2)


COUNTS = {
    "EKYT": ekyt,
    "FCN": fcn,
    "TCN": tcn,
    "INCEPTION": inception,
    "MCDCNN": mcdcnn,
    "TLENET": tlenet,
}


if __name__ == "__main__":
    for name, fn in COUNTS.items():
        print(name, [fn(L) for L in (1250, 2500, 3750, 5000)])
