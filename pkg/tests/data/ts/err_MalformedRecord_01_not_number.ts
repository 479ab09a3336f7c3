@problemName NotNumber
@univariate true
@classLabel true 0 1
@data
1,two,3:1
