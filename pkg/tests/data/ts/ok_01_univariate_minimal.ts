@problemName toy
@univariate true
@classLabel true 0 1
@data
1.0,2.0,3.0:0
