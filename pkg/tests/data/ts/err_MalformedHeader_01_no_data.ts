@problemName NoData
@univariate true
@classLabel true 0 1
