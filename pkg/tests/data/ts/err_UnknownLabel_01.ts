@problemName BadLabel
@univariate true
@classLabel true A B
@data
1,2:A
3,4:C
