class PivotError(Exception):
    """Raised by the LDL' numeric kernels when a pivot is not acceptably positive.

    Carries the (permuted) column index of the offending pivot and its value.
    """

    def __init__(self, index, value):
        self.index = int(index)
        self.value = float(value)
        super().__init__(f"non-positive pivot {value!r} at permuted column {index}")
