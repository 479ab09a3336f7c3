@problemName Empty
@univariate true
@seriesLength 5
@classLabel true 0 1
@data
